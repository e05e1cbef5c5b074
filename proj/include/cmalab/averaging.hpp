#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmalab {

/// Flat model parameters; the unit of checkpointing and averaging.
using ParamVector = std::vector<double>;

/// Checkpoints ordered oldest first (the last entry is the most recent),
/// with strictly increasing step indices.
struct CheckpointSeries {
  std::vector<ParamVector> checkpoints;
  std::vector<std::int64_t> steps;

  std::size_t size() const { return checkpoints.size(); }
};

struct AverageStrategy {
  enum class Kind { Sma, Ema, Wma };

  Kind kind = Kind::Ema;
  double alpha = 0.2;           // Ema only, in (0, 1]
  std::vector<double> weights;  // Wma only, oldest first, sums to 1

  static AverageStrategy sma();
  static AverageStrategy ema(double alpha);
  static AverageStrategy wma(std::vector<double> weights);
};

std::string to_string(AverageStrategy::Kind kind);
AverageStrategy::Kind average_kind_from_string(const std::string& name);

void validate(const CheckpointSeries& series);
void validate(const AverageStrategy& strategy, std::size_t window);

/// Combine the series into a single parameter vector.
///
/// Sma is the uniform mean; Ema applies the recursion
/// avg_i = alpha * m_i + (1 - alpha) * avg_{i-1} from oldest to newest with
/// avg_1 = m_1; Wma is the weighted sum. Accumulation runs elementwise in
/// long double with a fixed oldest-to-newest order so results are
/// bit-reproducible.
ParamVector average(const CheckpointSeries& series,
                    const AverageStrategy& strategy);

/// Weights proportional to the per-checkpoint learning-rate drop:
/// w_i = eta_i - eta_{i+1} for i < N and w_N = eta_N. Requires eta_1 == 1,
/// a non-increasing sequence, and eta_N >= 0; the result telescopes to sum 1.
std::vector<double> derive_wma_weights(const std::vector<double>& etas);

/// Checkpoints persist as a flat little-endian float64 array plus a JSON
/// sidecar at `path + ".json"` holding {dim, step}.
void save_checkpoint(const std::string& path, const ParamVector& values,
                     std::int64_t step);

struct LoadedCheckpoint {
  ParamVector values;
  std::int64_t step = 0;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace cmalab
