#include "silobench/training.hpp"

#include <nlohmann/json.hpp>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "silobench/errors.hpp"
#include "silobench/orchestrator.hpp"

namespace silobench {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size < 2) throw ConfigError("batch size must be >= 2 (BN)");
  if (learning_rate < 0.0) throw ConfigError("learning rate must be >= 0");
  if (ewc_lambda < 0.0) throw ConfigError("ewc lambda must be >= 0");
  arch.validate();
}

std::string train_log_jsonl(const std::vector<EpochStat>& log) {
  std::ostringstream out;
  for (const auto& e : log) {
    nlohmann::json j;
    j["epoch"] = e.epoch;
    j["mean_loss"] = e.mean_loss;
    j["train_accuracy"] = e.train_accuracy;
    out << j.dump() << "\n";
  }
  return out.str();
}

namespace {

struct LabeledData {
  Eigen::MatrixXd x;
  std::vector<int> labels;
};

LabeledData train_matrix(const InstitutionSilo& silo, const CohortSplit& split,
                         SiloAccess key) {
  const auto& records = silo.records(key);
  const SplitResult idx = split_cohorts(records, split);
  LabeledData out;
  std::vector<std::vector<double>> raw;
  raw.reserve(idx.train.size());
  for (std::size_t i : idx.train) {
    raw.push_back(records[i].features);
    out.labels.push_back(records[i].retained ? 1 : 0);
  }
  out.x = silo.schema().encode(raw);
  return out;
}

Eigen::Vector2d inverse_frequency_weights(const std::vector<int>& labels) {
  double n1 = 0;
  for (int l : labels) n1 += l;
  const double n = static_cast<double>(labels.size());
  const double n0 = n - n1;
  if (n0 == 0.0 || n1 == 0.0) return {1.0, 1.0};  // single class: no reweighting
  // n / (2 * n_c): average weight is 1 over a balanced draw.
  return {n / (2.0 * n0), n / (2.0 * n1)};
}

struct EwcTerm {
  const ModelParams* anchor = nullptr;
  const FisherDiagonal* fisher = nullptr;
  double lambda = 0.0;
};

// Adds lambda * F .* (theta - theta*) in place and returns the penalty value.
double apply_ewc(Gradients& grads, const ModelParams& params, const EwcTerm& ewc) {
  if (ewc.lambda == 0.0 || ewc.anchor == nullptr) return 0.0;
  double penalty = 0.0;
  auto add = [&](Eigen::Ref<Eigen::MatrixXd> g,
                 const Eigen::Ref<const Eigen::MatrixXd>& theta,
                 const Eigen::Ref<const Eigen::MatrixXd>& anchor,
                 const Eigen::Ref<const Eigen::MatrixXd>& f) {
    const Eigen::MatrixXd diff = theta - anchor;
    penalty += 0.5 * ewc.lambda * (f.array() * diff.array().square()).sum();
    g += ewc.lambda * (f.array() * diff.array()).matrix();
  };
  for (std::size_t l = 0; l < grads.extractor.size(); ++l) {
    add(grads.extractor[l].weight, params.extractor[l].weight,
        ewc.anchor->extractor[l].weight, ewc.fisher->extractor[l].weight);
    add(grads.extractor[l].bias, params.extractor[l].bias,
        ewc.anchor->extractor[l].bias, ewc.fisher->extractor[l].bias);
  }
  add(grads.bottleneck.weight, params.bottleneck.weight,
      ewc.anchor->bottleneck.weight, ewc.fisher->bottleneck.weight);
  add(grads.bottleneck.bias, params.bottleneck.bias, ewc.anchor->bottleneck.bias,
      ewc.fisher->bottleneck.bias);
  add(grads.bn_gamma, params.bn.gamma, ewc.anchor->bn.gamma, ewc.fisher->bn_gamma);
  add(grads.bn_beta, params.bn.beta, ewc.anchor->bn.beta, ewc.fisher->bn_beta);
  add(grads.classifier.weight, params.classifier.weight,
      ewc.anchor->classifier.weight, ewc.fisher->classifier.weight);
  add(grads.classifier.bias, params.classifier.bias,
      ewc.anchor->classifier.bias, ewc.fisher->classifier.bias);
  return penalty;
}

TrainResult run_training(ModelParams params, const LabeledData& data,
                         const TrainConfig& config, const EwcTerm& ewc) {
  const Eigen::Index n = data.x.rows();
  if (n < 2) throw DegenerateSplitError("need at least 2 training records");

  const Eigen::Vector2d class_weights = config.class_weighting
                                            ? inverse_frequency_weights(data.labels)
                                            : Eigen::Vector2d{1.0, 1.0};
  OptState opt_state = OptState::init(params);
  OptConfig opt;
  opt.kind = config.optimizer;
  opt.learning_rate = config.learning_rate;

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 2 <= order.size();
         start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - start);
      if (len < 2) break;  // BN needs two rows; drop a trailing singleton
      Eigen::MatrixXd xb(len, data.x.cols());
      std::vector<int> yb(len);
      for (std::size_t i = 0; i < len; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) =
            data.x.row(static_cast<Eigen::Index>(order[start + i]));
        yb[i] = data.labels[order[start + i]];
      }
      auto fwd = forward(params, xb, ForwardMode::train);
      auto [loss, grads] = backward(params, fwd.cache, yb,
                                    LossKind::weighted_cross_entropy,
                                    class_weights);
      loss += apply_ewc(grads, params, ewc);
      if (config.learning_rate > 0.0) {
        optimizer_step(params, grads, opt_state, opt);
      }
      loss_sum += loss;
      ++batches;
    }

    // Epoch accuracy in eval mode (pure; running statistics as of now).
    const Eigen::MatrixXd probs = predict(params, data.x);
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int pred = probs(i, 1) >= probs(i, 0) ? 1 : 0;
      correct += pred == data.labels[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    result.log.push_back({epoch + 1, batches ? loss_sum / static_cast<double>(batches) : 0.0,
                          static_cast<double>(correct) / static_cast<double>(n)});
  }
  result.params = std::move(params);
  return result;
}

}  // namespace

TrainResult train_local(const InstitutionSilo& silo, const CohortSplit& split,
                        const TrainConfig& config) {
  config.validate();
  const LabeledData data = train_matrix(silo, split, {});
  ModelParams params =
      init_params(silo.schema().encoded_dim(), config.arch, config.seed);
  return run_training(std::move(params), data, config, {});
}

TrainResult fine_tune(const ModelParams& start, const InstitutionSilo& silo,
                      const CohortSplit& split, const TrainConfig& config) {
  config.validate();
  const LabeledData data = train_matrix(silo, split, {});
  return run_training(start, data, config, {});
}

TrainResult train_sequential_ewc(const TransferArtifact& artifact,
                                 const InstitutionSilo& silo,
                                 const CohortSplit& split,
                                 const TrainConfig& config) {
  config.validate();
  const ModelParams anchor = artifact.params();
  if (config.ewc_lambda > 0.0 && !artifact.fisher.has_value()) {
    throw ArtifactError("EWC requires a Fisher diagonal in the artifact");
  }
  const LabeledData data = train_matrix(silo, split, {});
  EwcTerm ewc;
  if (config.ewc_lambda > 0.0) {
    ewc.anchor = &anchor;
    ewc.fisher = &*artifact.fisher;
    ewc.lambda = config.ewc_lambda;
  }
  return run_training(anchor, data, config, ewc);
}

FisherDiagonal compute_fisher_diagonal(const ModelParams& params,
                                       const InstitutionSilo& silo,
                                       const CohortSplit& split,
                                       std::size_t sample_cap,
                                       std::uint64_t seed) {
  if (sample_cap == 0) throw ConfigError("fisher sample cap must be positive");
  const LabeledData data = train_matrix(silo, split, {});
  const auto n = static_cast<std::size_t>(data.x.rows());
  if (n == 0) throw DegenerateSplitError("no records for Fisher estimation");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (sample_cap < n) {
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(sample_cap);
    std::sort(idx.begin(), idx.end());
  }

  // Exact class expectation per example: F = E_x sum_y p_y (d log p_y)^2.
  // Eval mode, so this is a pure function of (params, data).
  FisherDiagonal fisher = Gradients::zeros_like(params);
  ModelParams working = params;  // eval forward does not mutate
  for (std::size_t i : idx) {
    auto fwd = forward(working, data.x.row(static_cast<Eigen::Index>(i)),
                       ForwardMode::eval);
    for (int y = 0; y < kNumClasses; ++y) {
      const double py = fwd.probs(0, y);
      Eigen::MatrixXd dlogits = fwd.probs;
      dlogits(0, y) -= 1.0;  // gradient of -log p_y wrt logits
      const Gradients g = backward_from_dlogits(working, fwd.cache, dlogits);
      auto acc = [py](Eigen::Ref<Eigen::MatrixXd> f,
                      const Eigen::Ref<const Eigen::MatrixXd>& gi) {
        f.array() += py * gi.array().square();
      };
      for (std::size_t l = 0; l < fisher.extractor.size(); ++l) {
        acc(fisher.extractor[l].weight, g.extractor[l].weight);
        acc(fisher.extractor[l].bias, g.extractor[l].bias);
      }
      acc(fisher.bottleneck.weight, g.bottleneck.weight);
      acc(fisher.bottleneck.bias, g.bottleneck.bias);
      acc(fisher.bn_gamma, g.bn_gamma);
      acc(fisher.bn_beta, g.bn_beta);
      acc(fisher.classifier.weight, g.classifier.weight);
      acc(fisher.classifier.bias, g.classifier.bias);
    }
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  for_each_tensor(fisher,
                  [inv](Eigen::Ref<Eigen::MatrixXd> t) { t *= inv; });
  return fisher;
}

double ewc_penalty_value(const ModelParams& params, const ModelParams& anchor,
                         const FisherDiagonal& fisher, double lambda) {
  Gradients scratch = Gradients::zeros_like(params);
  EwcTerm term{&anchor, &fisher, lambda};
  return apply_ewc(scratch, params, term);
}

}  // namespace silobench
