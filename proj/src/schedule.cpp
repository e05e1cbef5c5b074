#include "cmalab/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace cmalab {

std::string to_string(ScheduleShape shape) {
  switch (shape) {
    case ScheduleShape::Constant: return "constant";
    case ScheduleShape::Cosine: return "cosine";
    case ScheduleShape::WsdOneSqrt: return "wsd_one_sqrt";
    case ScheduleShape::WsdSqrtCube: return "wsd_sqrt_cube";
  }
  throw std::invalid_argument("unknown schedule shape");
}

ScheduleShape schedule_shape_from_string(const std::string& name) {
  if (name == "constant") return ScheduleShape::Constant;
  if (name == "cosine") return ScheduleShape::Cosine;
  if (name == "wsd_one_sqrt") return ScheduleShape::WsdOneSqrt;
  if (name == "wsd_sqrt_cube") return ScheduleShape::WsdSqrtCube;
  throw std::invalid_argument("unknown schedule shape: " + name);
}

Schedule Schedule::constant(double peak, std::int64_t total,
                            std::int64_t warmup) {
  Schedule s;
  s.peak_lr = peak;
  s.end_lr = peak;
  s.warmup_steps = warmup;
  s.total_steps = total;
  s.decay_start = total;
  s.shape = ScheduleShape::Constant;
  validate(s);
  return s;
}

Schedule Schedule::cosine(double peak, double end, std::int64_t total,
                          std::int64_t warmup) {
  Schedule s;
  s.peak_lr = peak;
  s.end_lr = end;
  s.warmup_steps = warmup;
  s.total_steps = total;
  s.decay_start = warmup;  // cosine decays over the whole post-warmup span
  s.shape = ScheduleShape::Cosine;
  validate(s);
  return s;
}

Schedule Schedule::wsd_one_sqrt(double peak, double end, std::int64_t total,
                                std::int64_t warmup, std::int64_t decay_start) {
  Schedule s;
  s.peak_lr = peak;
  s.end_lr = end;
  s.warmup_steps = warmup;
  s.total_steps = total;
  s.decay_start = decay_start;
  s.shape = ScheduleShape::WsdOneSqrt;
  validate(s);
  return s;
}

Schedule Schedule::wsd_sqrt_cube(double peak, std::int64_t total,
                                 std::int64_t warmup, std::int64_t decay_start) {
  Schedule s;
  s.peak_lr = peak;
  s.end_lr = 0.0;
  s.warmup_steps = warmup;
  s.total_steps = total;
  s.decay_start = decay_start;
  s.shape = ScheduleShape::WsdSqrtCube;
  validate(s);
  return s;
}

void validate(const Schedule& s) {
  if (!(s.peak_lr > 0.0) || !std::isfinite(s.peak_lr))
    throw std::invalid_argument("peak_lr must be positive and finite");
  if (!(s.end_lr >= 0.0) || !std::isfinite(s.end_lr))
    throw std::invalid_argument("end_lr must be non-negative and finite");
  if (s.end_lr > s.peak_lr)
    throw std::invalid_argument("end_lr must not exceed peak_lr");
  if (s.warmup_steps < 0)
    throw std::invalid_argument("warmup_steps must be non-negative");
  if (s.total_steps <= 0)
    throw std::invalid_argument("total_steps must be positive");
  if (s.decay_start < s.warmup_steps || s.decay_start > s.total_steps)
    throw std::invalid_argument(
        "decay_start must lie in [warmup_steps, total_steps]");
}

double decay_eta(const Schedule& s, double r) {
  if (!(r >= 0.0 && r <= 1.0))
    throw std::out_of_range("decay progress must lie in [0, 1]");
  switch (s.shape) {
    case ScheduleShape::Constant:
      return s.peak_lr;
    case ScheduleShape::Cosine:
      // end + (peak-end)(1+cos(pi r))/2: exact at r == 1.
      return s.end_lr +
             (s.peak_lr - s.end_lr) * (1.0 + std::cos(3.14159265358979323846 * r)) * 0.5;
    case ScheduleShape::WsdOneSqrt: {
      const double sq = std::sqrt(r);
      return s.peak_lr * (1.0 - sq) + s.end_lr * sq;
    }
    case ScheduleShape::WsdSqrtCube:
      return s.peak_lr * std::pow(1.0 - r, 1.5);
  }
  throw std::invalid_argument("unknown schedule shape");
}

double eta_at(const Schedule& s, std::int64_t t) {
  validate(s);
  if (t < 0 || t > s.total_steps)
    throw std::out_of_range("step index outside [0, total_steps]");
  if (s.warmup_steps > 0 && t <= s.warmup_steps)
    return s.peak_lr * static_cast<double>(t) /
           static_cast<double>(s.warmup_steps);

  const std::int64_t decay_from =
      s.shape == ScheduleShape::Cosine ? s.warmup_steps : s.decay_start;
  if (t < decay_from || decay_from == s.total_steps) return s.peak_lr;
  const double r = static_cast<double>(t - decay_from) /
                   static_cast<double>(s.total_steps - decay_from);
  return decay_eta(s, r);
}

std::vector<double> normalized_etas(const Schedule& s, std::int64_t n) {
  validate(s);
  if (n < 2) throw std::invalid_argument("need at least 2 checkpoints");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double r = static_cast<double>(i) / static_cast<double>(n - 1);
    out[static_cast<std::size_t>(i)] = decay_eta(s, r) / s.peak_lr;
  }
  out.front() = 1.0;  // pin the normalization against FP rounding at r == 0
  return out;
}

void to_json(nlohmann::json& j, const Schedule& s) {
  j = nlohmann::json{{"peak_lr", s.peak_lr},
                     {"end_lr", s.end_lr},
                     {"warmup_steps", s.warmup_steps},
                     {"total_steps", s.total_steps},
                     {"decay_start", s.decay_start},
                     {"shape", to_string(s.shape)}};
}

void from_json(const nlohmann::json& j, Schedule& s) {
  s.peak_lr = j.at("peak_lr").get<double>();
  s.end_lr = j.at("end_lr").get<double>();
  s.warmup_steps = j.at("warmup_steps").get<std::int64_t>();
  s.total_steps = j.at("total_steps").get<std::int64_t>();
  s.decay_start = j.value("decay_start", s.total_steps);
  s.shape = schedule_shape_from_string(j.at("shape").get<std::string>());
  validate(s);
}

}  // namespace cmalab
