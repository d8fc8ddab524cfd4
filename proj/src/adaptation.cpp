#include "silobench/adaptation.hpp"

#include <nlohmann/json.hpp>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "silobench/errors.hpp"

namespace silobench {

std::string to_string(AdaptMethod m) {
  switch (m) {
    case AdaptMethod::shot: return "shot";
    case AdaptMethod::tent: return "tent";
    case AdaptMethod::pseudo_label: return "pseudo_label";
  }
  return "shot";
}

AdaptMethod adapt_method_from_string(const std::string& s) {
  if (s == "shot") return AdaptMethod::shot;
  if (s == "tent") return AdaptMethod::tent;
  if (s == "pseudo_label") return AdaptMethod::pseudo_label;
  throw ConfigError("unknown adaptation method '" + s + "'");
}

void AdaptConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (shot_pl_weight < 0.0) throw ConfigError("shot pseudo-label weight must be >= 0");
  if (!(pl_confidence_threshold > 0.5 && pl_confidence_threshold < 1.0)) {
    throw ConfigError("confidence threshold must lie in (0.5, 1)");
  }
}

std::string adapt_log_jsonl(const std::vector<AdaptRound>& log) {
  std::ostringstream out;
  for (const auto& r : log) {
    nlohmann::json j;
    j["round"] = r.round;
    j["objective"] = r.objective;
    j["confident_count"] = r.confident_count;
    out << j.dump() << "\n";
  }
  return out.str();
}

std::vector<std::size_t> confident_set(const Eigen::MatrixXd& probs, double tau) {
  std::vector<std::size_t> out;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (probs.row(i).maxCoeff() >= tau) out.push_back(static_cast<std::size_t>(i));
  }
  return out;
}

namespace {

void check_features(const ModelParams& params, const Eigen::MatrixXd& x) {
  if (x.rows() < 2) throw BatchSizeError("adaptation needs at least 2 rows");
  if (x.cols() != static_cast<Eigen::Index>(params.input_dim)) {
    throw ValidationError("target features do not match the model input");
  }
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n,
                                                   std::size_t batch_size,
                                                   std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t len = std::min(batch_size, n - start);
    if (len < 2) break;  // batch statistics need two rows
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + len));
  }
  return batches;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& x,
                          const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        x.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

// Two-class centroid pseudo-labels in bottleneck feature space (cosine
// distance), initialized from soft predictions with one hard refinement.
std::vector<int> centroid_pseudo_labels(const Eigen::MatrixXd& features,
                                        const Eigen::MatrixXd& probs) {
  const Eigen::Index n = features.rows();
  const Eigen::Index d = features.cols();

  auto cos_dist = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 1.0;
    return 1.0 - a.dot(b) / (na * nb);
  };

  Eigen::MatrixXd centroids(kNumClasses, d);
  for (int k = 0; k < kNumClasses; ++k) {
    const double mass = probs.col(k).sum();
    if (mass == 0.0) {
      centroids.row(k).setZero();
    } else {
      centroids.row(k) = (probs.col(k).transpose() * features) / mass;
    }
  }

  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (int pass = 0; pass < 2; ++pass) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd f = features.row(i).transpose();
      double best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < kNumClasses; ++k) {
        const double dist = cos_dist(f, centroids.row(k).transpose());
        if (dist < best) {
          best = dist;
          labels[static_cast<std::size_t>(i)] = k;
        }
      }
    }
    if (pass == 1) break;
    // Hard reassignment of centroids; empty clusters keep the soft centroid.
    for (int k = 0; k < kNumClasses; ++k) {
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(d);
      std::size_t count = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] == k) {
          sum += features.row(i);
          ++count;
        }
      }
      if (count > 0) centroids.row(k) = sum / static_cast<double>(count);
    }
  }
  return labels;
}

}  // namespace

AdaptResult adapt_shot(const ModelParams& params,
                       const Eigen::MatrixXd& target_features,
                       const AdaptConfig& config) {
  config.validate();
  check_features(params, target_features);

  AdaptResult result;
  result.params = params;
  ModelParams& model = result.params;

  OptState opt_state = OptState::init(model);
  OptConfig opt{config.optimizer, config.learning_rate};
  const UpdateMask mask = UpdateMask::freeze_classifier();
  std::mt19937_64 rng(config.seed);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    // Labeling pass: eval mode, deterministic and batch-order independent.
    auto full = forward(model, target_features, ForwardMode::eval);
    const std::vector<int> pseudo =
        centroid_pseudo_labels(full.cache.bn_out, full.probs);

    double objective = 0.0;
    std::size_t steps = 0;
    for (const auto& batch_idx :
         make_batches(static_cast<std::size_t>(target_features.rows()),
                      config.batch_size, rng)) {
      const Eigen::MatrixXd xb = take_rows(target_features, batch_idx);
      std::vector<int> yb(batch_idx.size());
      for (std::size_t i = 0; i < batch_idx.size(); ++i) {
        yb[i] = pseudo[batch_idx[i]];
      }
      auto fwd = forward(model, xb, ForwardMode::train);
      const LossGrad ent = entropy_grad(fwd.probs);
      const LossGrad div = diversity_grad(fwd.probs);
      const LossGrad ce = cross_entropy_grad(fwd.probs, yb);
      Eigen::MatrixXd dlogits =
          ent.dlogits + div.dlogits + config.shot_pl_weight * ce.dlogits;
      const Gradients grads = backward_from_dlogits(model, fwd.cache, dlogits);
      optimizer_step(model, grads, opt_state, opt, mask);
      objective += ent.value + div.value + config.shot_pl_weight * ce.value;
      ++steps;
    }
    result.log.push_back(
        {epoch + 1, steps ? objective / static_cast<double>(steps) : 0.0, 0});
  }
  return result;
}

AdaptResult adapt_tent(const ModelParams& params,
                       const Eigen::MatrixXd& target_features,
                       const AdaptConfig& config) {
  config.validate();
  if (params.bn.gamma.size() == 0) {
    throw ArchitectureError("TENT requires a batch-normalization layer");
  }
  check_features(params, target_features);

  AdaptResult result;
  result.params = params;
  ModelParams& model = result.params;

  OptState opt_state = OptState::init(model);
  OptConfig opt{config.optimizer, config.learning_rate};
  const UpdateMask mask = UpdateMask::bn_affine_only();
  std::mt19937_64 rng(config.seed);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    double objective = 0.0;
    std::size_t steps = 0;
    for (const auto& batch_idx :
         make_batches(static_cast<std::size_t>(target_features.rows()),
                      config.batch_size, rng)) {
      const Eigen::MatrixXd xb = take_rows(target_features, batch_idx);
      auto fwd = forward(model, xb, ForwardMode::tent);
      const LossGrad ent = entropy_grad(fwd.probs);
      const Gradients grads = backward_from_dlogits(model, fwd.cache, ent.dlogits);
      optimizer_step(model, grads, opt_state, opt, mask);
      objective += ent.value;
      ++steps;
    }
    result.log.push_back(
        {epoch + 1, steps ? objective / static_cast<double>(steps) : 0.0, 0});
  }

  // Re-estimate running statistics from one full pass so later eval-mode
  // scoring is deterministic regardless of adaptation batch composition.
  auto full = forward(model, target_features, ForwardMode::tent);
  const Eigen::MatrixXd& zb = full.cache.bottleneck_pre;
  const Eigen::RowVectorXd mean = zb.colwise().mean();
  model.bn.running_mean = mean.transpose();
  model.bn.running_var =
      (zb.rowwise() - mean).array().square().matrix().colwise().mean().transpose();
  return result;
}

AdaptResult adapt_pseudo_label(const ModelParams& params,
                               const Eigen::MatrixXd& target_features,
                               const AdaptConfig& config) {
  config.validate();
  check_features(params, target_features);

  AdaptResult result;
  result.params = params;
  ModelParams& model = result.params;

  OptState opt_state = OptState::init(model);
  OptConfig opt{config.optimizer, config.learning_rate};
  std::mt19937_64 rng(config.seed);

  for (std::size_t round = 0; round < config.epochs; ++round) {
    const Eigen::MatrixXd probs = predict(model, target_features);
    const std::vector<std::size_t> confident =
        confident_set(probs, config.pl_confidence_threshold);
    if (confident.size() < 2) {
      // Nothing to fine-tune on (a single row cannot form batch statistics).
      if (round == 0) result.no_confident_examples = true;
      result.log.push_back({round + 1, 0.0, confident.size()});
      break;
    }

    std::vector<int> pseudo(confident.size());
    for (std::size_t i = 0; i < confident.size(); ++i) {
      const Eigen::Index r = static_cast<Eigen::Index>(confident[i]);
      pseudo[i] = probs(r, 1) >= probs(r, 0) ? 1 : 0;
    }
    const Eigen::MatrixXd x_conf = take_rows(target_features, confident);

    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (const auto& batch_idx :
         make_batches(confident.size(), config.batch_size, rng)) {
      const Eigen::MatrixXd xb = take_rows(x_conf, batch_idx);
      std::vector<int> yb(batch_idx.size());
      for (std::size_t i = 0; i < batch_idx.size(); ++i) yb[i] = pseudo[batch_idx[i]];
      auto fwd = forward(model, xb, ForwardMode::train);
      auto [loss, grads] = backward(model, fwd.cache, yb, LossKind::cross_entropy);
      optimizer_step(model, grads, opt_state, opt);
      loss_sum += loss;
      ++steps;
    }
    result.log.push_back(
        {round + 1, steps ? loss_sum / static_cast<double>(steps) : 0.0,
         confident.size()});
  }
  return result;
}

AdaptResult adapt(const ModelParams& params,
                  const Eigen::MatrixXd& target_features,
                  const AdaptConfig& config) {
  switch (config.method) {
    case AdaptMethod::shot: return adapt_shot(params, target_features, config);
    case AdaptMethod::tent: return adapt_tent(params, target_features, config);
    case AdaptMethod::pseudo_label:
      return adapt_pseudo_label(params, target_features, config);
  }
  throw ConfigError("unknown adaptation method");
}

}  // namespace silobench
