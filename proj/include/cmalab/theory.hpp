#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cmalab/rng.hpp"

namespace cmalab::theory {

/// The 2D quadratic testbed: loss L(w) = 0.5 * ||w - w*||^2 with w* at the
/// origin, optimized by SGD over a dataset whose first coordinate carries an
/// evenly spaced signal ramp and whose second coordinate is pure
/// Uniform(-L, L) noise. Per-sample loss 0.5 * ||w - x||^2 gives the update
/// w_t = (1 - eta_t) w_{t-1} + eta_t x_t, so eta_t in [0, 1] keeps every
/// iterate inside the data's convex hull.

struct Point2 {
  double signal = 0.0;
  double noise = 0.0;
};

/// Signal coordinates are implicit: point i (0-based) sits at i * spacing
/// with spacing = scale / size. Noise coordinates are stored per point.
struct Dataset {
  double scale = 1.0;          // L
  double spacing = 0.0;        // d = L / M
  std::vector<double> noise;   // second coordinates

  std::size_t size() const { return noise.size(); }
  double signal(std::size_t i) const {
    return spacing * static_cast<double>(i);
  }
};

Dataset gen_dataset(std::int64_t size, double scale, CounterRng& rng);

// --- learning-rate sequences over 1-based steps t = 1..M ---

/// Decay window length for the practical WSD schedule: the last 10% of
/// iterations, T0 = M - floor(0.9 M).
std::int64_t practical_wsd_t0(std::int64_t m);

/// Decay window length for the moderate (WSMD) schedule, ceil(M^exponent).
std::int64_t wsmd_t0(std::int64_t m, double exponent = 2.0 / 3.0);

/// Plateau at 1/2 through step M - T0 + 1, then harmonic decay
/// 1 / (t - (M - T0)); the last step returns exactly 1/T0.
double harmonic_decay_eta(std::int64_t t, std::int64_t m, std::int64_t t0,
                          double eta0 = 0.5);

double practical_wsd_eta(std::int64_t t, std::int64_t m);
double wsmd_eta(std::int64_t t, std::int64_t m, std::int64_t t0);

enum class TheoryScheduleKind { Constant, PracticalWsd, Wsmd };

struct TheorySchedule {
  TheoryScheduleKind kind = TheoryScheduleKind::PracticalWsd;
  double eta0 = 0.5;               // Constant value / plateau height
  double t0_exponent = 2.0 / 3.0;  // Wsmd
};

/// Materializes eta_1..eta_M.
std::vector<double> schedule_etas(const TheorySchedule& schedule,
                                  std::int64_t m);

// --- strategies ---

enum class StrategyKind {
  UniformSampling,     // i.i.d. draws with replacement, any schedule
  AscendPracticalWsd,  // deterministic ascending order, 10%-decay WSD
  AscendWsmd,          // ascending order, T0 = ceil(M^t0_exponent)
  AscendSwa            // ascending order, constant eta0, tail average
};

std::string to_string(StrategyKind kind);

struct Strategy {
  StrategyKind kind = StrategyKind::UniformSampling;
  TheorySchedule schedule;           // UniformSampling only
  double t0_exponent = 2.0 / 3.0;    // AscendWsmd
  double eta0 = 0.5;                 // AscendSwa constant learning rate
  double n_exponent = 2.0 / 3.0;     // AscendSwa window, n = ceil(M^n_exponent)

  static Strategy uniform(TheorySchedule schedule);
  static Strategy ascend_practical_wsd();
  static Strategy ascend_wsmd(double t0_exponent = 2.0 / 3.0);
  static Strategy ascend_swa(double eta0 = 0.5, double n_exponent = 2.0 / 3.0);
};

struct TheoryConfig {
  std::int64_t dataset_size = 1000;  // M, also the iteration count
  double scale = 1.0;                // L
  Strategy strategy;
  std::uint64_t seed = 0;
};

void validate(const TheoryConfig& config);

/// Per-strategy learning-rate sequence eta_1..eta_M.
std::vector<double> strategy_etas(const Strategy& strategy, std::int64_t m);

enum class SampleOrder { Uniform, Ascending };

/// Runs SGD from w0 and returns the trajectory w_0..w_M. Ascending order
/// consumes the dataset from its last point down to its first; uniform order
/// draws indices i.i.d. with replacement from `rng`. Every eta must lie in
/// [0, 1].
std::vector<Point2> run_sgd(const Dataset& data, SampleOrder order,
                            std::span<const double> etas, Point2 w0,
                            CounterRng& rng);

/// Plain mean of the final n iterates.
Point2 swa_tail(std::span<const Point2> trajectory, std::int64_t n);

double loss_at(Point2 w);

struct LossEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::int64_t runs = 0;
};

/// Monte Carlo estimate of the expected final loss over `runs` independent
/// seeded simulations. Every run redraws the dataset noise (and, for uniform
/// sampling, the index sequence) from its own substream; the final parameter
/// is the SWA tail mean when the strategy averages.
LossEstimate estimate_loss(const TheoryConfig& config, std::int64_t runs);

/// Per-run final losses, for CSV export. Run r uses substream(seed, r).
std::vector<double> per_run_losses(const TheoryConfig& config,
                                   std::int64_t runs);

/// Least-squares slope of log(loss) against log(M); needs >= 3 points with
/// positive coordinates.
double fit_scaling(std::span<const std::pair<double, double>> points);

struct AxisMoments {
  double mean = 0.0;
  double second_moment = 0.0;
};

struct OracleMoments {
  AxisMoments signal;
  AxisMoments noise;

  double loss() const {
    return 0.5 * (signal.second_moment + noise.second_moment);
  }
};

/// Exact moment propagation through the affine per-step update, used as an
/// independent check on the Monte Carlo path.
///
/// Signal axis: E[w_t] = (1-eta_t) E[w_{t-1}] + eta_t E[x_t] with the
/// dataset's empirical mean (uniform sampling) or the deterministic ramp
/// value (ascending). Noise axis: Var(Uniform(-L, L)) = L^2/3; uniform
/// sampling additionally tracks E[w_t * xbar], the correlation with the
/// realized dataset mean, because draws with replacement revisit the same
/// noise values with probability 1/M. AscendSwa propagates the tail-average
/// covariances in closed form.
OracleMoments oracle_moments(const TheoryConfig& config);

}  // namespace cmalab::theory
