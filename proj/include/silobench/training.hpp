#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "silobench/data_model.hpp"
#include "silobench/network.hpp"

namespace silobench {

// Diagonal Fisher information; shape-congruent with the learnable
// parameters, entries nonnegative.
using FisherDiagonal = Gradients;

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;  // 0 disables updates (BN stats still move)
  OptKind optimizer = OptKind::adam;
  std::uint64_t seed = 0;
  bool class_weighting = true;
  double ewc_lambda = 0.0;  // 0 = plain fine-tuning
  ArchConfig arch;

  void validate() const;
};

struct EpochStat {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochStat> log;
};

std::string train_log_jsonl(const std::vector<EpochStat>& log);

// Minibatch training on the silo's train cohorts from a fresh seeded
// initialization. Deterministic for a fixed (config, silo).
TrainResult train_local(const InstitutionSilo& silo, const CohortSplit& split,
                        const TrainConfig& config);

// Continue training from existing parameters (the lambda=0 sequential path).
TrainResult fine_tune(const ModelParams& start, const InstitutionSilo& silo,
                      const CohortSplit& split, const TrainConfig& config);

// Stage-2 training: silo loss plus (lambda/2) * sum_i F_i (theta_i - theta*_i)^2
// anchored at the artifact's parameters. Requires a Fisher diagonal in the
// artifact when lambda > 0.
TrainResult train_sequential_ewc(const TransferArtifact& artifact,
                                 const InstitutionSilo& silo,
                                 const CohortSplit& split,
                                 const TrainConfig& config);

// Exact per-example class expectation of the squared log-likelihood
// gradient, averaged over (up to sample_cap) train-cohort examples. The
// seed only drives example subsampling when the cap binds.
FisherDiagonal compute_fisher_diagonal(const ModelParams& params,
                                       const InstitutionSilo& silo,
                                       const CohortSplit& split,
                                       std::size_t sample_cap = 2000,
                                       std::uint64_t seed = 0);

// (lambda/2) * sum_i F_i (theta_i - theta*_i)^2
double ewc_penalty_value(const ModelParams& params, const ModelParams& anchor,
                         const FisherDiagonal& fisher, double lambda);

}  // namespace silobench
