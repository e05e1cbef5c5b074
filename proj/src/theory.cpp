#include "cmalab/theory.hpp"

#include <cmath>
#include <stdexcept>

namespace cmalab::theory {

Dataset gen_dataset(std::int64_t size, double scale, CounterRng& rng) {
  if (size < 2) throw std::invalid_argument("dataset size must be >= 2");
  if (!(scale > 0.0)) throw std::invalid_argument("scale must be positive");
  Dataset data;
  data.scale = scale;
  data.spacing = scale / static_cast<double>(size);
  data.noise.resize(static_cast<std::size_t>(size));
  for (auto& v : data.noise) v = rng.uniform(-scale, scale);
  return data;
}

std::int64_t practical_wsd_t0(std::int64_t m) {
  const auto t0 = m - static_cast<std::int64_t>(std::floor(0.9 * static_cast<double>(m)));
  if (t0 < 2) throw std::invalid_argument("dataset too small for a 10% decay window");
  return t0;
}

std::int64_t wsmd_t0(std::int64_t m, double exponent) {
  const auto t0 = static_cast<std::int64_t>(
      std::ceil(std::pow(static_cast<double>(m), exponent)));
  if (t0 < 2 || t0 > m)
    throw std::invalid_argument("decay window must lie in [2, M]");
  return t0;
}

double harmonic_decay_eta(std::int64_t t, std::int64_t m, std::int64_t t0,
                          double eta0) {
  if (t < 1 || t > m) throw std::out_of_range("step must lie in [1, M]");
  if (t0 < 2 || t0 > m)
    throw std::invalid_argument("decay window must lie in [2, M]");
  if (t <= m - t0 + 1) return eta0;
  return 1.0 / static_cast<double>(t - (m - t0));
}

double practical_wsd_eta(std::int64_t t, std::int64_t m) {
  return harmonic_decay_eta(t, m, practical_wsd_t0(m));
}

double wsmd_eta(std::int64_t t, std::int64_t m, std::int64_t t0) {
  return harmonic_decay_eta(t, m, t0);
}

std::vector<double> schedule_etas(const TheorySchedule& schedule,
                                  std::int64_t m) {
  if (m < 2) throw std::invalid_argument("need at least 2 steps");
  std::vector<double> etas(static_cast<std::size_t>(m));
  switch (schedule.kind) {
    case TheoryScheduleKind::Constant: {
      if (!(schedule.eta0 > 0.0 && schedule.eta0 <= 1.0))
        throw std::invalid_argument("constant eta must lie in (0, 1]");
      for (auto& e : etas) e = schedule.eta0;
      return etas;
    }
    case TheoryScheduleKind::PracticalWsd: {
      for (std::int64_t t = 1; t <= m; ++t)
        etas[static_cast<std::size_t>(t - 1)] = practical_wsd_eta(t, m);
      return etas;
    }
    case TheoryScheduleKind::Wsmd: {
      const std::int64_t t0 = wsmd_t0(m, schedule.t0_exponent);
      for (std::int64_t t = 1; t <= m; ++t)
        etas[static_cast<std::size_t>(t - 1)] = wsmd_eta(t, m, t0);
      return etas;
    }
  }
  throw std::invalid_argument("unknown theory schedule kind");
}

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::UniformSampling: return "uniform";
    case StrategyKind::AscendPracticalWsd: return "ascend_wsd";
    case StrategyKind::AscendWsmd: return "ascend_wsmd";
    case StrategyKind::AscendSwa: return "ascend_swa";
  }
  throw std::invalid_argument("unknown strategy kind");
}

Strategy Strategy::uniform(TheorySchedule schedule) {
  Strategy s;
  s.kind = StrategyKind::UniformSampling;
  s.schedule = schedule;
  return s;
}

Strategy Strategy::ascend_practical_wsd() {
  Strategy s;
  s.kind = StrategyKind::AscendPracticalWsd;
  return s;
}

Strategy Strategy::ascend_wsmd(double t0_exponent) {
  Strategy s;
  s.kind = StrategyKind::AscendWsmd;
  s.t0_exponent = t0_exponent;
  return s;
}

Strategy Strategy::ascend_swa(double eta0, double n_exponent) {
  Strategy s;
  s.kind = StrategyKind::AscendSwa;
  s.eta0 = eta0;
  s.n_exponent = n_exponent;
  return s;
}

void validate(const TheoryConfig& config) {
  if (config.dataset_size < 2)
    throw std::invalid_argument("dataset size must be >= 2");
  if (!(config.scale > 0.0) || !std::isfinite(config.scale))
    throw std::invalid_argument("scale must be positive and finite");
  if (config.strategy.kind == StrategyKind::AscendSwa &&
      !(config.strategy.eta0 > 0.0 && config.strategy.eta0 <= 1.0))
    throw std::invalid_argument("swa learning rate must lie in (0, 1]");
}

std::vector<double> strategy_etas(const Strategy& strategy, std::int64_t m) {
  switch (strategy.kind) {
    case StrategyKind::UniformSampling:
      return schedule_etas(strategy.schedule, m);
    case StrategyKind::AscendPracticalWsd:
      return schedule_etas({TheoryScheduleKind::PracticalWsd, 0.5, 0.0}, m);
    case StrategyKind::AscendWsmd:
      return schedule_etas(
          {TheoryScheduleKind::Wsmd, 0.5, strategy.t0_exponent}, m);
    case StrategyKind::AscendSwa:
      return schedule_etas({TheoryScheduleKind::Constant, strategy.eta0, 0.0},
                           m);
  }
  throw std::invalid_argument("unknown strategy kind");
}

namespace {

std::int64_t swa_window(const Strategy& strategy, std::int64_t m) {
  const auto n = static_cast<std::int64_t>(
      std::ceil(std::pow(static_cast<double>(m), strategy.n_exponent)));
  return std::min(n, m);
}

void check_etas(std::span<const double> etas, std::size_t m) {
  if (etas.size() != m)
    throw std::invalid_argument("schedule length must equal dataset size");
  for (double e : etas)
    if (!(e >= 0.0 && e <= 1.0))
      throw std::invalid_argument("eta must lie in [0, 1]");
}

}  // namespace

std::vector<Point2> run_sgd(const Dataset& data, SampleOrder order,
                            std::span<const double> etas, Point2 w0,
                            CounterRng& rng) {
  const std::size_t m = data.size();
  check_etas(etas, m);

  std::vector<Point2> trajectory;
  trajectory.reserve(m + 1);
  trajectory.push_back(w0);
  Point2 w = w0;
  for (std::size_t t = 0; t < m; ++t) {
    const std::size_t i = order == SampleOrder::Ascending
                              ? m - 1 - t
                              : static_cast<std::size_t>(rng.next_below(m));
    const double eta = etas[t];
    w.signal = (1.0 - eta) * w.signal + eta * data.signal(i);
    w.noise = (1.0 - eta) * w.noise + eta * data.noise[i];
    trajectory.push_back(w);
  }
  return trajectory;
}

Point2 swa_tail(std::span<const Point2> trajectory, std::int64_t n) {
  if (n < 1) throw std::invalid_argument("tail window must be positive");
  if (static_cast<std::size_t>(n) > trajectory.size())
    throw std::invalid_argument("tail window exceeds trajectory length");
  long double s1 = 0.0L, s2 = 0.0L;
  for (std::size_t k = trajectory.size() - static_cast<std::size_t>(n);
       k < trajectory.size(); ++k) {
    s1 += trajectory[k].signal;
    s2 += trajectory[k].noise;
  }
  return {static_cast<double>(s1 / static_cast<long double>(n)),
          static_cast<double>(s2 / static_cast<long double>(n))};
}

double loss_at(Point2 w) { return 0.5 * (w.signal * w.signal + w.noise * w.noise); }

namespace {

// Streaming variant of run_sgd + swa_tail: final point only, no trajectory.
Point2 run_final(const Dataset& data, SampleOrder order,
                 std::span<const double> etas, Point2 w0, std::int64_t tail,
                 CounterRng& rng) {
  const std::size_t m = data.size();
  check_etas(etas, m);
  Point2 w = w0;
  long double acc_signal = 0.0L, acc_noise = 0.0L;
  const std::size_t tail_from = m - static_cast<std::size_t>(tail);
  for (std::size_t t = 0; t < m; ++t) {
    const std::size_t i = order == SampleOrder::Ascending
                              ? m - 1 - t
                              : static_cast<std::size_t>(rng.next_below(m));
    const double eta = etas[t];
    w.signal = (1.0 - eta) * w.signal + eta * data.signal(i);
    w.noise = (1.0 - eta) * w.noise + eta * data.noise[i];
    if (t >= tail_from) {
      acc_signal += w.signal;
      acc_noise += w.noise;
    }
  }
  if (tail <= 1) return w;
  return {static_cast<double>(acc_signal / static_cast<long double>(tail)),
          static_cast<double>(acc_noise / static_cast<long double>(tail))};
}

}  // namespace

std::vector<double> per_run_losses(const TheoryConfig& config,
                                   std::int64_t runs) {
  validate(config);
  if (runs < 1) throw std::invalid_argument("need at least one run");

  const std::int64_t m = config.dataset_size;
  const std::vector<double> etas = strategy_etas(config.strategy, m);
  const SampleOrder order =
      config.strategy.kind == StrategyKind::UniformSampling
          ? SampleOrder::Uniform
          : SampleOrder::Ascending;
  const std::int64_t tail = config.strategy.kind == StrategyKind::AscendSwa
                                ? swa_window(config.strategy, m)
                                : 1;
  const Point2 w0{config.scale, 0.0};

  std::vector<double> losses(static_cast<std::size_t>(runs));
  for (std::int64_t r = 0; r < runs; ++r) {
    CounterRng rng = CounterRng::substream(config.seed, static_cast<std::uint64_t>(r));
    const Dataset data = gen_dataset(m, config.scale, rng);
    const Point2 w = run_final(data, order, etas, w0, tail, rng);
    losses[static_cast<std::size_t>(r)] = loss_at(w);
  }
  return losses;
}

LossEstimate estimate_loss(const TheoryConfig& config, std::int64_t runs) {
  const std::vector<double> losses = per_run_losses(config, runs);
  long double sum = 0.0L;
  for (double v : losses) sum += v;
  const double mean = static_cast<double>(sum / static_cast<long double>(runs));
  long double sq = 0.0L;
  for (double v : losses) {
    const long double dev = v - mean;
    sq += dev * dev;
  }
  LossEstimate est;
  est.mean = mean;
  est.runs = runs;
  est.std_error =
      runs > 1 ? std::sqrt(static_cast<double>(
                     sq / (static_cast<long double>(runs) *
                           static_cast<long double>(runs - 1))))
               : 0.0;
  return est;
}

double fit_scaling(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3)
    throw std::invalid_argument("need at least 3 points for a slope fit");
  for (const auto& [x, y] : points)
    if (!(x > 0.0) || !(y > 0.0))
      throw std::invalid_argument("slope fit needs positive coordinates");

  long double sx = 0.0L, sy = 0.0L;
  for (const auto& [x, y] : points) {
    sx += std::log(x);
    sy += std::log(y);
  }
  const long double n = static_cast<long double>(points.size());
  const long double mx = sx / n, my = sy / n;
  long double sxy = 0.0L, sxx = 0.0L;
  for (const auto& [x, y] : points) {
    const long double dx = std::log(x) - mx;
    sxy += dx * (std::log(y) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0L) throw std::invalid_argument("slope fit needs distinct M");
  return static_cast<double>(sxy / sxx);
}

namespace {

struct AxisState {
  double mean = 0.0;
  double second = 0.0;
};

}  // namespace

OracleMoments oracle_moments(const TheoryConfig& config) {
  validate(config);
  const std::int64_t m = config.dataset_size;
  const double scale = config.scale;
  const double spacing = scale / static_cast<double>(m);
  const std::vector<double> etas = strategy_etas(config.strategy, m);
  const double noise_var = scale * scale / 3.0;

  const bool uniform = config.strategy.kind == StrategyKind::UniformSampling;
  const bool swa = config.strategy.kind == StrategyKind::AscendSwa;
  const std::int64_t tail = swa ? swa_window(config.strategy, m) : 1;
  const std::int64_t tail_from = m - tail + 1;

  // Empirical moments of the signal ramp {0, d, ..., (M-1)d}.
  const double md = static_cast<double>(m);
  const double sig_mean = spacing * (md - 1.0) / 2.0;
  const double sig_second =
      spacing * spacing * (md - 1.0) * (2.0 * md - 1.0) / 6.0;

  AxisState sig{scale, scale * scale};  // w0 = (L, 0)
  AxisState noi{0.0, 0.0};
  double noise_dsmean_cov = 0.0;  // E[w_t * xbar], uniform sampling only

  // Tail-average accumulators (AscendSwa): the noise axis needs the pair
  // covariances E[w_t w_t'] = (1-eta)^(t-t') E[w_t'^2], which hold exactly
  // because each ascending step consumes a fresh noise coordinate.
  long double tail_mean_sig = 0.0L;
  long double tail_total = 0.0L;  // sum of tail second moments
  long double tail_cross = 0.0L;  // sum over ordered pairs t' < t
  long double tail_geo = 0.0L;    // sum_{t'<t} (1-eta)^(t-t') s_{t'}
  bool tail_started = false;
  double tail_prev_second = 0.0;

  for (std::int64_t t = 1; t <= m; ++t) {
    const double eta = etas[static_cast<std::size_t>(t - 1)];
    const double keep = 1.0 - eta;

    double x_mean, x_second;
    if (uniform) {
      x_mean = sig_mean;
      x_second = sig_second;
    } else {
      // Ascending order: step t consumes point M - t + 1 (1-based), whose
      // signal coordinate is (M - t) d.
      const double x = spacing * static_cast<double>(m - t);
      x_mean = x;
      x_second = x * x;
    }

    const double prev_sig_mean = sig.mean;
    sig.mean = keep * sig.mean + eta * x_mean;
    sig.second = keep * keep * sig.second +
                 2.0 * eta * keep * prev_sig_mean * x_mean +
                 eta * eta * x_second;

    const double prev_cov = noise_dsmean_cov;
    noi.second = keep * keep * noi.second +
                 2.0 * eta * keep * (uniform ? prev_cov : 0.0) +
                 eta * eta * noise_var;
    if (uniform)
      noise_dsmean_cov =
          keep * prev_cov + eta * noise_var / static_cast<double>(m);

    if (swa && t >= tail_from) {
      tail_mean_sig += sig.mean;
      if (tail_started) {
        tail_geo = static_cast<long double>(keep) *
                   (tail_geo + static_cast<long double>(tail_prev_second));
        tail_cross += tail_geo;
      }
      tail_total += noi.second;
      tail_prev_second = noi.second;
      tail_started = true;
    }
  }

  OracleMoments out;
  if (!swa) {
    out.signal = {sig.mean, uniform ? sig.second : sig.mean * sig.mean};
    out.noise = {0.0, noi.second};
    return out;
  }
  const long double nn = static_cast<long double>(tail);
  const double mean_sig_tail = static_cast<double>(tail_mean_sig / nn);
  out.signal = {mean_sig_tail, mean_sig_tail * mean_sig_tail};
  out.noise = {0.0, static_cast<double>((tail_total + 2.0L * tail_cross) /
                                        (nn * nn))};
  return out;
}

}  // namespace cmalab::theory
