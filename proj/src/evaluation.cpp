#include "silobench/evaluation.hpp"

#include "silobench/errors.hpp"

namespace silobench {

MetricReport evaluate_on_silo(const ModelParams& params,
                              const InstitutionSilo& silo,
                              const CohortSplit& split,
                              const EvalConfig& config) {
  const auto& records = silo.records({});
  const SplitResult idx = split_cohorts(records, split);

  std::vector<std::vector<double>> raw;
  raw.reserve(idx.test.size());
  ScoredPredictions preds;
  preds.labels.reserve(idx.test.size());
  preds.groups.reserve(idx.test.size());
  std::vector<StudentRecord> test_records;
  test_records.reserve(idx.test.size());
  for (std::size_t i : idx.test) {
    raw.push_back(records[i].features);
    preds.labels.push_back(records[i].retained ? 1 : 0);
    preds.groups.push_back(records[i].group());
    test_records.push_back(records[i]);
  }
  const Eigen::MatrixXd x = silo.schema().encode(raw);
  preds.scores = predict(params, x).col(1);
  preds.validate();

  ThresholdPolicy policy;
  switch (config.policy) {
    case ThresholdPolicy::Kind::default_threshold:
      policy = default_policy();
      break;
    case ThresholdPolicy::Kind::overall_optimal:
      policy = overall_optimal_policy(preds.scores,
                                      silo.historical_retention_rate(split));
      break;
    case ThresholdPolicy::Kind::group_optimal:
      policy = group_optimal_policy(preds.scores, preds.groups,
                                    silo.historical_group_rates(split),
                                    silo.historical_retention_rate(split));
      break;
  }

  MetricReport report;
  report.threshold_kind = policy.kind_name();
  report.rates_used = policy.rates_used;
  if (policy.kind != ThresholdPolicy::Kind::default_threshold) {
    report.overall_rate_used = policy.overall_rate_used;
  }

  try {
    report.auc = auc(preds);
  } catch (const UndefinedMetricError& e) {
    report.exclusions.push_back(e.what());
  }

  const GroupPartition partition = partition_groups(test_records, config.group_floor);
  for (const GroupKey& g : partition.below_floor) {
    report.exclusions.push_back("group " + g.label() +
                                " below AUC-Gap size floor");
  }
  try {
    const AucGapResult gap = auc_gap(preds, partition.eligible());
    report.auc_gap = gap.gap;
    report.auc_gap_pair = {gap.worst_low, gap.worst_high};
    report.per_group_auc = gap.per_group;
    for (const GroupKey& g : gap.excluded) {
      report.exclusions.push_back("group " + g.label() +
                                  " excluded from AUC Gap: single class");
    }
  } catch (const UndefinedMetricError& e) {
    report.exclusions.push_back(e.what());
  }

  const ThresholdSpec spec = policy.spec();
  const ConfusionBreakdown cb = confusion(preds, spec);
  report.per_group_confusion = cb.per_group;
  for (const auto& [g, idx_unused] : partition.indices) {
    if (policy.kind == ThresholdPolicy::Kind::group_optimal) {
      auto it = policy.per_group.find(g);
      if (it != policy.per_group.end()) report.thresholds_used[g] = it->second;
    } else {
      report.thresholds_used[g] = policy.single;
    }
  }
  report.mcc = mcc(cb.overall);
  try {
    report.specificity = specificity(cb.overall);
  } catch (const UndefinedMetricError& e) {
    report.exclusions.push_back(e.what());
  }
  try {
    report.eo_gender = equalized_odds(preds, spec, EoAttribute::gender);
  } catch (const UndefinedMetricError& e) {
    report.exclusions.push_back(std::string("gender: ") + e.what());
  }
  try {
    report.eo_urm = equalized_odds(preds, spec, EoAttribute::urm);
  } catch (const UndefinedMetricError& e) {
    report.exclusions.push_back(std::string("urm: ") + e.what());
  }
  return report;
}

}  // namespace silobench
