#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmalab {

/// Samples paired with scalar quality scores. Payloads live elsewhere; a
/// permutation of [0, n) is how an ordering refers back to them.
struct ScoredDataset {
  std::vector<double> scores;

  std::size_t size() const { return scores.size(); }
};

/// Realized training order: a bijection on {0..n-1}.
using Permutation = std::vector<std::size_t>;

/// Declarative ordering rule.
///
/// Uniform is a seeded shuffle; Ascend/Descend sort by score (ties keep the
/// original index order); Folded shuffles, splits into `folds` contiguous
/// chunks of near-equal size and sorts each chunk ascending; TwoPhase applies
/// `phases[0]` to [0, split) and `phases[1]` to [split, n) independently;
/// AllTogether sorts ascending across any phase boundary.
struct OrderPolicy {
  enum class Kind { Uniform, Ascend, Descend, Folded, TwoPhase, AllTogether };

  Kind kind = Kind::Uniform;
  std::uint64_t seed = 0;            // Uniform, Folded
  std::int64_t folds = 2;            // Folded
  std::int64_t split = 0;            // TwoPhase
  std::vector<OrderPolicy> phases;   // TwoPhase: exactly two entries

  static OrderPolicy uniform(std::uint64_t seed);
  static OrderPolicy ascend();
  static OrderPolicy descend();
  static OrderPolicy folded(std::int64_t folds, std::uint64_t seed);
  static OrderPolicy two_phase(OrderPolicy first, OrderPolicy second,
                               std::int64_t split);
  static OrderPolicy all_together();
};

std::string to_string(const OrderPolicy& policy);

/// Parses a policy spec string: "uniform", "ascend", "descend", "folded:K",
/// "all_together", or "two_phase:FIRST+SECOND:SPLIT" where FIRST/SECOND are
/// non-nested specs. Seeds are assigned by the caller afterwards.
OrderPolicy parse_policy(const std::string& text);

/// Applies the policy's seed (and its phases') from a single value.
void seed_policy(OrderPolicy& policy, std::uint64_t seed);

Permutation make_order(const ScoredDataset& ds, const OrderPolicy& policy);

bool is_permutation(const Permutation& perm, std::size_t n);

/// Scores ingest as CSV lines "index,score" (header optional) or as JSON
/// lines {"index": i, "score": q}; rows may arrive in any index order.
ScoredDataset load_scores_csv(const std::string& path);
ScoredDataset load_scores_jsonl(const std::string& path);

/// Newline-delimited indices.
void write_permutation(const std::string& path, const Permutation& perm);

}  // namespace cmalab
