#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace cmalab {

enum class ScheduleShape { Constant, Cosine, WsdOneSqrt, WsdSqrtCube };

std::string to_string(ScheduleShape shape);
ScheduleShape schedule_shape_from_string(const std::string& name);

/// A learning-rate schedule: linear warmup from zero, an optional constant
/// plateau, and a shape-specific decay tail.
///
/// The decay region is [decay_start, total_steps] for the WSD shapes and the
/// whole post-warmup span [warmup_steps, total_steps] for Cosine. Constant
/// has no decay region (decay_start == total_steps by convention).
/// WsdSqrtCube decays toward zero; it records end_lr but does not clamp to it.
struct Schedule {
  double peak_lr = 3e-3;
  double end_lr = 1e-5;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  std::int64_t decay_start = 1;
  ScheduleShape shape = ScheduleShape::WsdOneSqrt;

  static Schedule constant(double peak, std::int64_t total,
                           std::int64_t warmup = 0);
  static Schedule cosine(double peak, double end, std::int64_t total,
                         std::int64_t warmup = 0);
  static Schedule wsd_one_sqrt(double peak, double end, std::int64_t total,
                               std::int64_t warmup, std::int64_t decay_start);
  static Schedule wsd_sqrt_cube(double peak, std::int64_t total,
                                std::int64_t warmup, std::int64_t decay_start);
};

/// Throws std::invalid_argument if the schedule violates its invariants.
void validate(const Schedule& s);

/// Learning rate at integer step t. Steps are 0-based; t must lie in
/// [0, total_steps] or std::out_of_range is thrown. Warmup is linear from 0
/// and reaches peak_lr exactly at t == warmup_steps.
double eta_at(const Schedule& s, std::int64_t t);

/// Learning rate at fractional progress r in [0, 1] through the decay
/// region. r = 0 gives peak_lr for every shape.
double decay_eta(const Schedule& s, double r);

/// Schedule values at n >= 2 evenly spaced decay positions r_i = i/(n-1),
/// divided by peak_lr so the first entry is exactly 1.
std::vector<double> normalized_etas(const Schedule& s, std::int64_t n);

void to_json(nlohmann::json& j, const Schedule& s);
void from_json(const nlohmann::json& j, Schedule& s);

}  // namespace cmalab
