#include "silobench/thresholds.hpp"

#include <algorithm>
#include <cmath>

#include "silobench/errors.hpp"

namespace silobench {

std::string to_string(ThresholdPolicy::Kind k) {
  switch (k) {
    case ThresholdPolicy::Kind::default_threshold: return "default";
    case ThresholdPolicy::Kind::overall_optimal: return "overall_optimal";
    case ThresholdPolicy::Kind::group_optimal: return "group_optimal";
  }
  return "default";
}

ThresholdPolicy::Kind threshold_kind_from_string(const std::string& s) {
  if (s == "default") return ThresholdPolicy::Kind::default_threshold;
  if (s == "overall_optimal") return ThresholdPolicy::Kind::overall_optimal;
  if (s == "group_optimal") return ThresholdPolicy::Kind::group_optimal;
  throw ConfigError("unknown threshold policy '" + s + "'");
}

ThresholdSpec ThresholdPolicy::spec() const {
  if (kind == Kind::group_optimal) return per_group;
  return single;
}

std::string ThresholdPolicy::kind_name() const { return to_string(kind); }

ThresholdPolicy default_policy() {
  ThresholdPolicy p;
  p.kind = ThresholdPolicy::Kind::default_threshold;
  p.single = 0.5;
  return p;
}

double base_rate_threshold(std::vector<double> scores, double rate) {
  if (scores.empty()) throw ValidationError("no scores to threshold");
  if (!(rate > 0.0 && rate < 1.0)) {
    throw ConfigError("historical rate must lie in (0,1)");
  }
  std::sort(scores.begin(), scores.end());
  const double q = 1.0 - rate;
  auto idx = static_cast<std::size_t>(
      std::floor(q * static_cast<double>(scores.size())));
  idx = std::min(idx, scores.size() - 1);
  return scores[idx];
}

ThresholdPolicy overall_optimal_policy(const Eigen::VectorXd& scores,
                                       double historical_rate) {
  ThresholdPolicy p;
  p.kind = ThresholdPolicy::Kind::overall_optimal;
  p.single = base_rate_threshold(
      std::vector<double>(scores.data(), scores.data() + scores.size()),
      historical_rate);
  p.overall_rate_used = historical_rate;
  return p;
}

ThresholdPolicy group_optimal_policy(const Eigen::VectorXd& scores,
                                     const std::vector<GroupKey>& groups,
                                     const std::map<GroupKey, double>& group_rates,
                                     double overall_rate) {
  if (static_cast<std::size_t>(scores.size()) != groups.size()) {
    throw ValidationError("scores/groups length mismatch");
  }
  ThresholdPolicy p;
  p.kind = ThresholdPolicy::Kind::group_optimal;
  p.overall_rate_used = overall_rate;

  std::map<GroupKey, std::vector<double>> by_group;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    by_group[groups[i]].push_back(scores(static_cast<Eigen::Index>(i)));
  }
  for (auto& [g, s] : by_group) {
    if (s.empty()) {
      p.excluded_groups.insert(g);
      continue;
    }
    double rate = overall_rate;
    auto it = group_rates.find(g);
    if (it != group_rates.end()) {
      rate = it->second;
    } else {
      p.fallback_groups.insert(g);
    }
    p.per_group[g] = base_rate_threshold(s, rate);
    p.rates_used[g] = rate;
  }
  if (p.per_group.empty()) throw ValidationError("no group had any scores");
  return p;
}

}  // namespace silobench
