#pragma once

#include "silobench/data_model.hpp"
#include "silobench/metrics.hpp"
#include "silobench/network.hpp"
#include "silobench/thresholds.hpp"

namespace silobench {

struct EvalConfig {
  ThresholdPolicy::Kind policy = ThresholdPolicy::Kind::default_threshold;
  std::size_t group_floor = 20;  // AUC-Gap eligibility
};

// Scores the silo's test cohort and assembles the full MetricReport inside
// the privacy boundary: scores, labels, and group keys never leave. Optimal
// policies draw their rates from the silo's own train-year history.
MetricReport evaluate_on_silo(const ModelParams& params,
                              const InstitutionSilo& silo,
                              const CohortSplit& split,
                              const EvalConfig& config);

}  // namespace silobench
