#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "silobench/network.hpp"

namespace silobench {

enum class AdaptMethod { shot, tent, pseudo_label };

std::string to_string(AdaptMethod m);
AdaptMethod adapt_method_from_string(const std::string& s);

// Source-free adaptation knobs. All three adapters see target features only;
// there is no label parameter anywhere on this surface.
struct AdaptConfig {
  AdaptMethod method = AdaptMethod::shot;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  OptKind optimizer = OptKind::adam;
  double shot_pl_weight = 0.3;            // weight of the pseudo-label CE term
  double pl_confidence_threshold = 0.9;   // in (0.5, 1)
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdaptRound {
  std::size_t round = 0;
  double objective = 0.0;
  std::size_t confident_count = 0;  // pseudo-labeling only
};

struct AdaptResult {
  ModelParams params;
  bool no_confident_examples = false;  // pseudo-labeling warning flag
  std::vector<AdaptRound> log;
};

std::string adapt_log_jsonl(const std::vector<AdaptRound>& log);

// SHOT: classifier frozen bit-for-bit; extractor/bottleneck/BN-affine trained
// on [mean prediction entropy - entropy of the mean prediction] plus weighted
// cross entropy against two-class centroid pseudo-labels (cosine distance in
// bottleneck feature space, one refinement pass, recomputed each epoch).
AdaptResult adapt_shot(const ModelParams& params,
                       const Eigen::MatrixXd& target_features,
                       const AdaptConfig& config);

// TENT: entropy minimization in tent mode (batch statistics); gradient
// updates restricted to BN scale/shift. Afterwards the running statistics
// are re-estimated from one full pass so eval-mode evaluation is
// deterministic and batch-order independent.
AdaptResult adapt_tent(const ModelParams& params,
                       const Eigen::MatrixXd& target_features,
                       const AdaptConfig& config);

// Confidence-filtered self-training: per round, examples whose max predicted
// probability clears the threshold get their argmax as pseudo-label and the
// model fine-tunes on those only. No confident examples -> parameters
// returned unchanged with the warning flag set.
AdaptResult adapt_pseudo_label(const ModelParams& params,
                               const Eigen::MatrixXd& target_features,
                               const AdaptConfig& config);

AdaptResult adapt(const ModelParams& params,
                  const Eigen::MatrixXd& target_features,
                  const AdaptConfig& config);

// Brute-force oracle helper: indices with max predicted probability >= tau.
std::vector<std::size_t> confident_set(const Eigen::MatrixXd& probs,
                                       double tau);

}  // namespace silobench
