#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace silobench {

inline constexpr int kNumClasses = 2;

struct ArchConfig {
  std::vector<std::size_t> extractor_widths{64, 32};
  std::size_t bottleneck_width = 16;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  void validate() const;  // zero widths, momentum outside (0,1) -> ConfigError
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct BatchNormState {
  Eigen::VectorXd gamma;  // scale
  Eigen::VectorXd beta;   // shift
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
  double momentum = 0.1;  // weight of the fresh batch statistics
  double epsilon = 1e-5;
};

// All learnable parameters of the extractor -> bottleneck(+BN) -> classifier
// stack. ReLU after each extractor layer; the BN output is the bottleneck
// feature used by the classifier (and by centroid pseudo-labeling).
struct ModelParams {
  std::size_t input_dim = 0;
  std::vector<DenseLayer> extractor;
  DenseLayer bottleneck;
  BatchNormState bn;
  DenseLayer classifier;  // kNumClasses x bottleneck width

  void validate() const;  // shape chaining + finiteness
  std::size_t bottleneck_width() const {
    return static_cast<std::size_t>(bottleneck.weight.rows());
  }
};

// Same shape-tree as the learnable parameters (BN running stats excluded;
// they are statistics, not learned).
struct Gradients {
  std::vector<DenseLayer> extractor;
  DenseLayer bottleneck;
  Eigen::VectorXd bn_gamma;
  Eigen::VectorXd bn_beta;
  DenseLayer classifier;

  static Gradients zeros_like(const ModelParams& params);
  double max_abs() const;
  double squared_norm() const;
};

// Visit every learnable tensor as a flat list, in a fixed canonical order.
// `fn` receives (rows x cols) maps; vectors appear as n x 1.
void for_each_tensor(ModelParams& p, const std::function<void(Eigen::Ref<Eigen::MatrixXd>)>& fn);
void for_each_tensor(const ModelParams& p, const std::function<void(const Eigen::Ref<const Eigen::MatrixXd>&)>& fn);
void for_each_tensor(Gradients& g, const std::function<void(Eigen::Ref<Eigen::MatrixXd>)>& fn);
void for_each_tensor(const Gradients& g, const std::function<void(const Eigen::Ref<const Eigen::MatrixXd>&)>& fn);

enum class ForwardMode { train, eval, tent };

struct ForwardCache {
  ForwardMode mode = ForwardMode::eval;
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre_acts;   // extractor pre-activations
  std::vector<Eigen::MatrixXd> post_acts;  // extractor ReLU outputs
  Eigen::MatrixXd bottleneck_pre;          // before BN
  Eigen::MatrixXd bn_xhat;                 // normalized, before scale/shift
  Eigen::MatrixXd bn_out;                  // classifier input
  Eigen::VectorXd bn_inv_std;              // 1/sqrt(var + eps) actually used
  Eigen::MatrixXd probs;
  std::uint64_t params_fingerprint = 0;
};

ModelParams init_params(std::size_t input_dim, const ArchConfig& arch,
                        std::uint64_t seed);

// train: batch BN statistics, running stats updated (mutates params).
// eval:  running statistics; pure function of (params, batch).
// tent:  batch statistics, running stats untouched.
// Returns row-stochastic class probabilities and the cache for backward.
struct ForwardResult {
  Eigen::MatrixXd probs;
  ForwardCache cache;
};
ForwardResult forward(ModelParams& params, const Eigen::MatrixXd& batch,
                      ForwardMode mode);
// Eval-mode forward without the cache.
Eigen::MatrixXd predict(const ModelParams& params, const Eigen::MatrixXd& batch);

// Loss heads: value is the batch mean; dlogits already carries the 1/n.
struct LossGrad {
  double value = 0.0;
  Eigen::MatrixXd dlogits;
};
// Natural-log cross entropy; class_weights[c] scales examples of class c.
LossGrad cross_entropy_grad(const Eigen::MatrixXd& probs,
                            const std::vector<int>& labels,
                            const Eigen::Vector2d& class_weights = {1.0, 1.0});
// Mean Shannon entropy of the predictions (nats).
LossGrad entropy_grad(const Eigen::MatrixXd& probs);
// Negated entropy of the mean prediction: minimizing it spreads the
// marginal. value = -H(mean p).
LossGrad diversity_grad(const Eigen::MatrixXd& probs);

enum class LossKind { cross_entropy, entropy, weighted_cross_entropy };

// Exact analytic gradients of the given loss wrt every learnable parameter
// reachable under the cache's mode. Cache must come from `params`.
Gradients backward_from_dlogits(const ModelParams& params,
                                const ForwardCache& cache,
                                const Eigen::MatrixXd& dlogits);
std::pair<double, Gradients> backward(const ModelParams& params,
                                      const ForwardCache& cache,
                                      const std::vector<int>& labels,
                                      LossKind loss,
                                      const Eigen::Vector2d& class_weights = {1.0, 1.0});

enum class OptKind { sgd, adam };

struct OptConfig {
  OptKind kind = OptKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptState {
  Gradients m;  // first moments (adam)
  Gradients v;  // second moments (adam)
  long step = 0;

  static OptState init(const ModelParams& params);
};

// Which tensors an update is allowed to touch. Structural restrictions
// (TENT: BN affine only; SHOT: everything but the classifier) are enforced
// here rather than by copying parameters back.
struct UpdateMask {
  bool extractor = true;
  bool bottleneck = true;
  bool bn_gamma = true;
  bool bn_beta = true;
  bool classifier = true;

  static UpdateMask all();
  static UpdateMask bn_affine_only();
  static UpdateMask freeze_classifier();
};

void optimizer_step(ModelParams& params, const Gradients& grads,
                    OptState& state, const OptConfig& opt,
                    const UpdateMask& mask = UpdateMask::all());

// Versioned binary format: magic, version, tagged ARCH + WGHT sections,
// little-endian IEEE doubles. Round trips are bit exact.
std::vector<std::uint8_t> serialize_params(const ModelParams& params);
ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes);
std::string params_debug_json(const ModelParams& params);

std::uint64_t params_fingerprint(const ModelParams& params);

}  // namespace silobench
