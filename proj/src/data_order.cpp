#include "cmalab/data_order.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "cmalab/csv.hpp"
#include "cmalab/rng.hpp"
#include "json.hpp"

namespace cmalab {

OrderPolicy OrderPolicy::uniform(std::uint64_t seed) {
  OrderPolicy p;
  p.kind = Kind::Uniform;
  p.seed = seed;
  return p;
}

OrderPolicy OrderPolicy::ascend() {
  OrderPolicy p;
  p.kind = Kind::Ascend;
  return p;
}

OrderPolicy OrderPolicy::descend() {
  OrderPolicy p;
  p.kind = Kind::Descend;
  return p;
}

OrderPolicy OrderPolicy::folded(std::int64_t folds, std::uint64_t seed) {
  OrderPolicy p;
  p.kind = Kind::Folded;
  p.folds = folds;
  p.seed = seed;
  return p;
}

OrderPolicy OrderPolicy::two_phase(OrderPolicy first, OrderPolicy second,
                                   std::int64_t split) {
  OrderPolicy p;
  p.kind = Kind::TwoPhase;
  p.split = split;
  p.phases.push_back(std::move(first));
  p.phases.push_back(std::move(second));
  return p;
}

OrderPolicy OrderPolicy::all_together() {
  OrderPolicy p;
  p.kind = Kind::AllTogether;
  return p;
}

std::string to_string(const OrderPolicy& policy) {
  switch (policy.kind) {
    case OrderPolicy::Kind::Uniform: return "uniform";
    case OrderPolicy::Kind::Ascend: return "ascend";
    case OrderPolicy::Kind::Descend: return "descend";
    case OrderPolicy::Kind::Folded:
      return "folded:" + fmt_int(policy.folds);
    case OrderPolicy::Kind::TwoPhase:
      return "two_phase:" + to_string(policy.phases.at(0)) + "+" +
             to_string(policy.phases.at(1)) + ":" + fmt_int(policy.split);
    case OrderPolicy::Kind::AllTogether: return "all_together";
  }
  throw std::invalid_argument("unknown order policy kind");
}

OrderPolicy parse_policy(const std::string& text) {
  if (text == "uniform") return OrderPolicy::uniform(0);
  if (text == "ascend") return OrderPolicy::ascend();
  if (text == "descend") return OrderPolicy::descend();
  if (text == "all_together") return OrderPolicy::all_together();
  if (text.rfind("folded:", 0) == 0) {
    const std::int64_t k = std::stoll(text.substr(7));
    return OrderPolicy::folded(k, 0);
  }
  if (text.rfind("two_phase:", 0) == 0) {
    const std::string body = text.substr(10);
    const auto plus = body.find('+');
    const auto colon = body.rfind(':');
    if (plus == std::string::npos || colon == std::string::npos ||
        colon < plus)
      throw std::invalid_argument("two_phase spec must be "
                                  "two_phase:FIRST+SECOND:SPLIT");
    OrderPolicy first = parse_policy(body.substr(0, plus));
    OrderPolicy second = parse_policy(body.substr(plus + 1, colon - plus - 1));
    const std::int64_t split = std::stoll(body.substr(colon + 1));
    return OrderPolicy::two_phase(std::move(first), std::move(second), split);
  }
  throw std::invalid_argument("unknown order policy: " + text);
}

void seed_policy(OrderPolicy& policy, std::uint64_t seed) {
  policy.seed = seed;
  for (std::size_t i = 0; i < policy.phases.size(); ++i)
    seed_policy(policy.phases[i], seed + i + 1);
}

namespace {

// Substream tag for shuffles; keeps policy draws off the streams other
// modules derive from the same seed.
constexpr std::uint64_t kShuffleStream = 1000003;

Permutation shuffled_identity(std::size_t n, std::uint64_t seed) {
  Permutation perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  CounterRng rng = CounterRng::substream(seed, kShuffleStream);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

void stable_sort_by_score(const ScoredDataset& ds, Permutation::iterator first,
                          Permutation::iterator last) {
  std::stable_sort(first, last, [&ds](std::size_t a, std::size_t b) {
    return ds.scores[a] < ds.scores[b];
  });
}

}  // namespace

Permutation make_order(const ScoredDataset& ds, const OrderPolicy& policy) {
  const std::size_t n = ds.size();
  if (n == 0) throw std::invalid_argument("dataset is empty");
  for (double q : ds.scores)
    if (!std::isfinite(q)) throw std::invalid_argument("scores must be finite");

  switch (policy.kind) {
    case OrderPolicy::Kind::Uniform:
      return shuffled_identity(n, policy.seed);

    case OrderPolicy::Kind::Ascend:
    case OrderPolicy::Kind::AllTogether: {
      Permutation perm(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      stable_sort_by_score(ds, perm.begin(), perm.end());
      return perm;
    }

    case OrderPolicy::Kind::Descend: {
      Permutation perm = make_order(ds, OrderPolicy::ascend());
      std::reverse(perm.begin(), perm.end());
      return perm;
    }

    case OrderPolicy::Kind::Folded: {
      const std::int64_t k = policy.folds;
      if (k < 1 || static_cast<std::size_t>(k) > n)
        throw std::invalid_argument("folds must lie in [1, n]");
      Permutation perm = shuffled_identity(n, policy.seed);
      // First n % k chunks take one extra element.
      const std::size_t base = n / static_cast<std::size_t>(k);
      const std::size_t extra = n % static_cast<std::size_t>(k);
      std::size_t begin = 0;
      for (std::int64_t c = 0; c < k; ++c) {
        const std::size_t len = base + (static_cast<std::size_t>(c) < extra);
        stable_sort_by_score(ds, perm.begin() + static_cast<std::ptrdiff_t>(begin),
                             perm.begin() + static_cast<std::ptrdiff_t>(begin + len));
        begin += len;
      }
      return perm;
    }

    case OrderPolicy::Kind::TwoPhase: {
      if (policy.phases.size() != 2)
        throw std::invalid_argument("two_phase needs exactly two sub-policies");
      if (policy.split <= 0 || static_cast<std::size_t>(policy.split) >= n)
        throw std::invalid_argument("two_phase split must lie in (0, n)");
      const std::size_t split = static_cast<std::size_t>(policy.split);

      ScoredDataset first{std::vector<double>(ds.scores.begin(),
                                              ds.scores.begin() + static_cast<std::ptrdiff_t>(split))};
      ScoredDataset second{std::vector<double>(ds.scores.begin() + static_cast<std::ptrdiff_t>(split),
                                               ds.scores.end())};
      Permutation out = make_order(first, policy.phases[0]);
      Permutation tail = make_order(second, policy.phases[1]);
      out.reserve(n);
      for (std::size_t idx : tail) out.push_back(split + idx);
      return out;
    }
  }
  throw std::invalid_argument("unknown order policy kind");
}

bool is_permutation(const Permutation& perm, std::size_t n) {
  if (perm.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (std::size_t idx : perm) {
    if (idx >= n || seen[idx]) return false;
    seen[idx] = true;
  }
  return true;
}

ScoredDataset load_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::pair<std::int64_t, double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (rows.empty() && line.rfind("index", 0) == 0) continue;  // header
    std::istringstream ss(line);
    std::string idx_field, score_field;
    if (!std::getline(ss, idx_field, ',') || !std::getline(ss, score_field))
      throw std::runtime_error("malformed score row: " + line);
    rows.emplace_back(std::stoll(idx_field), std::stod(score_field));
  }
  ScoredDataset ds;
  ds.scores.resize(rows.size());
  std::vector<bool> seen(rows.size(), false);
  for (const auto& [idx, score] : rows) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= rows.size() ||
        seen[static_cast<std::size_t>(idx)])
      throw std::runtime_error("score indices must cover [0, n) exactly once");
    seen[static_cast<std::size_t>(idx)] = true;
    ds.scores[static_cast<std::size_t>(idx)] = score;
  }
  if (ds.scores.empty()) throw std::runtime_error("no scores in " + path);
  return ds;
}

ScoredDataset load_scores_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::pair<std::int64_t, double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    rows.emplace_back(j.at("index").get<std::int64_t>(),
                      j.at("score").get<double>());
  }
  ScoredDataset ds;
  ds.scores.resize(rows.size());
  std::vector<bool> seen(rows.size(), false);
  for (const auto& [idx, score] : rows) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= rows.size() ||
        seen[static_cast<std::size_t>(idx)])
      throw std::runtime_error("score indices must cover [0, n) exactly once");
    seen[static_cast<std::size_t>(idx)] = true;
    ds.scores[static_cast<std::size_t>(idx)] = score;
  }
  if (ds.scores.empty()) throw std::runtime_error("no scores in " + path);
  return ds;
}

void write_permutation(const std::string& path, const Permutation& perm) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (std::size_t idx : perm) out << idx << "\n";
}

}  // namespace cmalab
