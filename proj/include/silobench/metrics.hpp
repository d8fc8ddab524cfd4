#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "silobench/data_model.hpp"

namespace silobench {

// Scores are P(retained); decision rule: positive iff score >= threshold.
struct ScoredPredictions {
  Eigen::VectorXd scores;       // in [0,1]
  std::vector<int> labels;      // 0/1
  std::vector<GroupKey> groups; // parallel

  void validate() const;
  std::size_t size() const { return labels.size(); }
};

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
};

// A single threshold or per-group thresholds.
using ThresholdSpec = std::variant<double, std::map<GroupKey, double>>;

// Mann-Whitney AUC: fraction of (positive, negative) pairs where the
// positive scores higher, ties counted 1/2. Computed from average ranks.
// Single-class input -> UndefinedMetricError.
double auc(const Eigen::VectorXd& scores, const std::vector<int>& labels);
double auc(const ScoredPredictions& preds);

// AUC(T) - AUC(T'); the AUC drop of a scheme is delta_auc(local, scheme).
double delta_auc(double auc_t, double auc_t_prime);

struct AucGapResult {
  double gap = 0.0;
  GroupKey worst_low, worst_high;  // the contributing pair
  std::map<GroupKey, double> per_group;
  std::vector<GroupKey> excluded;  // eligible groups missing a class
};

// Max pairwise |AUC_g - AUC_g'| over eligible groups with both classes
// present. Fewer than two usable groups -> UndefinedMetricError.
AucGapResult auc_gap(const ScoredPredictions& preds,
                     const std::set<GroupKey>& eligible);

struct ConfusionBreakdown {
  ConfusionCounts overall;
  std::map<GroupKey, ConfusionCounts> per_group;
};

ConfusionBreakdown confusion(const ScoredPredictions& preds,
                             const ThresholdSpec& thresholds);

// 0 by convention when any marginal is zero.
double mcc(const ConfusionCounts& c);

// TN / (TN + FP); no actual negatives -> UndefinedMetricError.
double specificity(const ConfusionCounts& c);

enum class EoAttribute { gender, urm };  // female vs male; URM vs non-URM

// (|TPR0 - TPR1| + |TNR0 - TNR1|) / 2 under the applicable thresholds.
// A side with a single class -> UndefinedMetricError naming the group.
double equalized_odds(const ScoredPredictions& preds,
                      const ThresholdSpec& thresholds, EoAttribute attribute);

// Exact 1-D Wasserstein distance between empirical distributions,
// integrating |F_P - F_Q| over merged sorted breakpoints.
double wasserstein_1d(const std::vector<double>& p, const std::vector<double>& q);

// pass = no notable difference: distance < 0.05 * range (strict).
enum class Wtndd { pass, fail };
Wtndd wtndd(double distance, double combined_range);
std::string to_string(Wtndd v);
// max - min over the union of both samples.
double combined_range(const std::vector<double>& p, const std::vector<double>& q);

// Everything one evaluation produces; metrics that were undefined on this
// input are absent, with the reason recorded in `exclusions`.
struct MetricReport {
  std::optional<double> auc;
  std::optional<double> auc_gap;
  std::optional<std::pair<GroupKey, GroupKey>> auc_gap_pair;
  std::optional<double> mcc;
  std::optional<double> specificity;
  std::optional<double> eo_gender;
  std::optional<double> eo_urm;
  std::string threshold_kind;                  // policy provenance
  std::map<GroupKey, double> thresholds_used;  // single policies: one entry per group
  std::map<GroupKey, double> rates_used;       // historical rates behind the policy
  std::optional<double> overall_rate_used;
  std::map<GroupKey, double> per_group_auc;
  std::map<GroupKey, ConfusionCounts> per_group_confusion;
  std::vector<std::string> exclusions;

  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
};

}  // namespace silobench
