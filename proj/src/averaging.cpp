#include "cmalab/averaging.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint files are little-endian");

namespace cmalab {

AverageStrategy AverageStrategy::sma() {
  AverageStrategy s;
  s.kind = Kind::Sma;
  return s;
}

AverageStrategy AverageStrategy::ema(double alpha) {
  AverageStrategy s;
  s.kind = Kind::Ema;
  s.alpha = alpha;
  return s;
}

AverageStrategy AverageStrategy::wma(std::vector<double> weights) {
  AverageStrategy s;
  s.kind = Kind::Wma;
  s.weights = std::move(weights);
  return s;
}

std::string to_string(AverageStrategy::Kind kind) {
  switch (kind) {
    case AverageStrategy::Kind::Sma: return "sma";
    case AverageStrategy::Kind::Ema: return "ema";
    case AverageStrategy::Kind::Wma: return "wma";
  }
  throw std::invalid_argument("unknown averaging kind");
}

AverageStrategy::Kind average_kind_from_string(const std::string& name) {
  if (name == "sma") return AverageStrategy::Kind::Sma;
  if (name == "ema") return AverageStrategy::Kind::Ema;
  if (name == "wma") return AverageStrategy::Kind::Wma;
  throw std::invalid_argument("unknown averaging kind: " + name);
}

void validate(const CheckpointSeries& series) {
  if (series.checkpoints.empty())
    throw std::invalid_argument("checkpoint series is empty");
  if (series.steps.size() != series.checkpoints.size())
    throw std::invalid_argument("steps/checkpoints length mismatch");
  const std::size_t dim = series.checkpoints.front().size();
  if (dim == 0) throw std::invalid_argument("checkpoint dim must be positive");
  for (const auto& cp : series.checkpoints)
    if (cp.size() != dim)
      throw std::invalid_argument("checkpoint dim mismatch");
  for (std::size_t i = 1; i < series.steps.size(); ++i)
    if (series.steps[i] <= series.steps[i - 1])
      throw std::invalid_argument("checkpoint steps must strictly increase");
}

void validate(const AverageStrategy& strategy, std::size_t window) {
  switch (strategy.kind) {
    case AverageStrategy::Kind::Sma:
      return;
    case AverageStrategy::Kind::Ema:
      if (!(strategy.alpha > 0.0 && strategy.alpha <= 1.0))
        throw std::invalid_argument("ema alpha must lie in (0, 1]");
      return;
    case AverageStrategy::Kind::Wma: {
      if (strategy.weights.size() != window)
        throw std::invalid_argument("wma weight count must match the window");
      long double sum = 0.0L;
      for (double w : strategy.weights) {
        if (!(w >= 0.0) || !std::isfinite(w))
          throw std::invalid_argument("wma weights must be non-negative");
        sum += w;
      }
      if (std::fabs(static_cast<double>(sum) - 1.0) > 1e-9)
        throw std::invalid_argument("wma weights must sum to 1");
      return;
    }
  }
  throw std::invalid_argument("unknown averaging kind");
}

ParamVector average(const CheckpointSeries& series,
                    const AverageStrategy& strategy) {
  validate(series);
  validate(strategy, series.size());

  const std::size_t n = series.size();
  const std::size_t dim = series.checkpoints.front().size();
  ParamVector out(dim);

  switch (strategy.kind) {
    case AverageStrategy::Kind::Sma: {
      for (std::size_t j = 0; j < dim; ++j) {
        long double acc = 0.0L;
        for (std::size_t i = 0; i < n; ++i) acc += series.checkpoints[i][j];
        out[j] = static_cast<double>(acc / static_cast<long double>(n));
      }
      return out;
    }
    case AverageStrategy::Kind::Ema: {
      const long double a = strategy.alpha;
      for (std::size_t j = 0; j < dim; ++j) {
        long double m = series.checkpoints[0][j];
        for (std::size_t i = 1; i < n; ++i)
          m = a * series.checkpoints[i][j] + (1.0L - a) * m;
        out[j] = static_cast<double>(m);
      }
      return out;
    }
    case AverageStrategy::Kind::Wma: {
      for (std::size_t j = 0; j < dim; ++j) {
        long double acc = 0.0L;
        for (std::size_t i = 0; i < n; ++i)
          acc += static_cast<long double>(strategy.weights[i]) *
                 series.checkpoints[i][j];
        out[j] = static_cast<double>(acc);
      }
      return out;
    }
  }
  throw std::invalid_argument("unknown averaging kind");
}

std::vector<double> derive_wma_weights(const std::vector<double>& etas) {
  const std::size_t n = etas.size();
  if (n < 2) throw std::invalid_argument("need at least 2 normalized etas");
  if (std::fabs(etas.front() - 1.0) > 1e-9)
    throw std::invalid_argument("normalized etas must start at 1");
  if (!(etas.back() >= 0.0))
    throw std::invalid_argument("normalized etas must be non-negative");
  for (std::size_t i = 1; i < n; ++i)
    if (etas[i] > etas[i - 1])
      throw std::invalid_argument(
          "normalized etas must be non-increasing (would give a negative "
          "weight)");

  std::vector<double> weights(n);
  for (std::size_t i = 0; i + 1 < n; ++i) weights[i] = etas[i] - etas[i + 1];
  weights.back() = etas.back();
  return weights;
}

void save_checkpoint(const std::string& path, const ParamVector& values,
                     std::int64_t step) {
  if (values.empty()) throw std::invalid_argument("empty checkpoint");
  std::ofstream bin(path, std::ios::binary | std::ios::trunc);
  if (!bin) throw std::runtime_error("cannot open " + path + " for writing");
  bin.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!bin) throw std::runtime_error("short write to " + path);
  bin.close();

  nlohmann::json sidecar{{"dim", values.size()}, {"step", step}};
  std::ofstream meta(path + ".json", std::ios::trunc);
  if (!meta) throw std::runtime_error("cannot write sidecar for " + path);
  meta << sidecar.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream meta(path + ".json");
  if (!meta) throw std::runtime_error("missing sidecar for " + path);
  nlohmann::json sidecar = nlohmann::json::parse(meta);
  const auto dim = sidecar.at("dim").get<std::size_t>();
  if (dim == 0) throw std::runtime_error("sidecar dim must be positive");

  LoadedCheckpoint out;
  out.step = sidecar.at("step").get<std::int64_t>();
  out.values.resize(dim);
  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + path);
  bin.read(reinterpret_cast<char*>(out.values.data()),
           static_cast<std::streamsize>(dim * sizeof(double)));
  if (bin.gcount() != static_cast<std::streamsize>(dim * sizeof(double)))
    throw std::runtime_error("checkpoint size does not match sidecar dim");
  return out;
}

}  // namespace cmalab
