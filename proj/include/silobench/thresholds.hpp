#pragma once

#include <Eigen/Dense>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "silobench/data_model.hpp"
#include "silobench/metrics.hpp"

namespace silobench {

// Decision-threshold policies. "Optimal" = base-rate matching: the threshold
// is the empirical (1-r)-quantile of the deployment scores, so the predicted
// positive fraction tracks the institution's (or group's) historical
// retention rate. Only historical-cohort rates are used, never evaluation
// labels.
struct ThresholdPolicy {
  enum class Kind { default_threshold, overall_optimal, group_optimal };

  Kind kind = Kind::default_threshold;
  double single = 0.5;                      // default / overall-optimal
  std::map<GroupKey, double> per_group;     // group-optimal
  std::map<GroupKey, double> rates_used;    // provenance
  double overall_rate_used = 0.0;
  std::set<GroupKey> fallback_groups;       // lacked group history
  std::set<GroupKey> excluded_groups;       // no scores to threshold

  ThresholdSpec spec() const;
  std::string kind_name() const;
};

std::string to_string(ThresholdPolicy::Kind k);
ThresholdPolicy::Kind threshold_kind_from_string(const std::string& s);

ThresholdPolicy default_policy();

// Lower-interpolation empirical quantile: t = sorted[floor((1-r)*n)],
// clamped to the last element. r outside (0,1) -> ConfigError.
ThresholdPolicy overall_optimal_policy(const Eigen::VectorXd& scores,
                                       double historical_rate);

// Per-group quantile thresholds from each group's own scores and historical
// rate; groups without history fall back to the overall rate (flagged).
ThresholdPolicy group_optimal_policy(const Eigen::VectorXd& scores,
                                     const std::vector<GroupKey>& groups,
                                     const std::map<GroupKey, double>& group_rates,
                                     double overall_rate);

// The shared quantile rule.
double base_rate_threshold(std::vector<double> scores, double rate);

}  // namespace silobench
