#include <doctest.h>

#include <random>

#include "silobench/adaptation.hpp"
#include "silobench/errors.hpp"
#include "test_helpers.hpp"

using namespace silobench;
using test_helpers::max_rel_grad_error;

namespace {

Eigen::MatrixXd gaussian_blob(std::size_t n, const Eigen::Vector2d& center,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm(0.0, 0.4);
  Eigen::MatrixXd x(n, 2);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    x(i, 0) = center(0) + norm(rng);
    x(i, 1) = center(1) + norm(rng);
  }
  return x;
}

Eigen::MatrixXd stack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

// Train a tiny model on two separated clusters with known labels.
ModelParams cluster_model(std::uint64_t seed) {
  ArchConfig arch;
  arch.extractor_widths = {8};
  arch.bottleneck_width = 4;
  ModelParams p = init_params(2, arch, seed);
  const Eigen::MatrixXd x0 = gaussian_blob(60, {-1.5, 0.0}, seed + 1);
  const Eigen::MatrixXd x1 = gaussian_blob(60, {1.5, 0.0}, seed + 2);
  const Eigen::MatrixXd x = stack(x0, x1);
  std::vector<int> y(120, 0);
  std::fill(y.begin() + 60, y.end(), 1);
  OptState st = OptState::init(p);
  for (int epoch = 0; epoch < 120; ++epoch) {
    auto fwd = forward(p, x, ForwardMode::train);
    auto [loss, grads] = backward(p, fwd.cache, y, LossKind::cross_entropy);
    (void)loss;
    optimizer_step(p, grads, st, {OptKind::adam, 5e-3});
  }
  return p;
}

double accuracy(const ModelParams& p, const Eigen::MatrixXd& x,
                const std::vector<int>& y) {
  const Eigen::MatrixXd probs = predict(p, x);
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    hit += (probs(i, 1) >= 0.5 ? 1 : 0) == y[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hit) / static_cast<double>(x.rows());
}

AdaptConfig default_adapt(AdaptMethod m) {
  AdaptConfig c;
  c.method = m;
  c.epochs = 5;
  c.batch_size = 64;
  c.learning_rate = 1e-3;
  return c;
}

double info_max_objective(const ModelParams& p, const Eigen::MatrixXd& x) {
  ModelParams local = p;
  auto fwd = forward(local, x, ForwardMode::tent);  // batch statistics
  return entropy_grad(fwd.probs).value + diversity_grad(fwd.probs).value;
}

}  // namespace

TEST_CASE("adapt_shot: classifier parameters are frozen bit-for-bit") {
  const ModelParams p = cluster_model(1);
  const Eigen::MatrixXd target =
      stack(gaussian_blob(40, {-1.0, 0.6}, 5), gaussian_blob(40, {2.0, 0.6}, 6));
  const AdaptResult r = adapt_shot(p, target, default_adapt(AdaptMethod::shot));
  CHECK((r.params.classifier.weight - p.classifier.weight).norm() == 0.0);
  CHECK((r.params.classifier.bias - p.classifier.bias).norm() == 0.0);
  // and the feature path did move
  CHECK((r.params.bottleneck.weight - p.bottleneck.weight).norm() > 0.0);
}

TEST_CASE("adapt_shot: information-maximization objective does not increase") {
  const ModelParams p = cluster_model(2);
  const Eigen::MatrixXd target =
      stack(gaussian_blob(50, {-1.2, 0.5}, 7), gaussian_blob(50, {1.8, 0.5}, 8));
  AdaptConfig cfg = default_adapt(AdaptMethod::shot);
  cfg.batch_size = 128;  // full batch: plain descent on the objective
  cfg.learning_rate = 2e-3;
  cfg.epochs = 8;
  const double before = info_max_objective(p, target);
  const AdaptResult r = adapt_shot(p, target, cfg);
  const double after = info_max_objective(r.params, target);
  CHECK(after <= before + 1e-9);
}

TEST_CASE("adapt_shot: recovers accuracy under a label-preserving shift") {
  const ModelParams p = cluster_model(3);
  // Shift both clusters; labels still follow the cluster identity.
  const Eigen::MatrixXd t0 = gaussian_blob(60, {-0.9, 1.2}, 9);
  const Eigen::MatrixXd t1 = gaussian_blob(60, {2.1, 1.2}, 10);
  const Eigen::MatrixXd target = stack(t0, t1);
  std::vector<int> y(120, 0);
  std::fill(y.begin() + 60, y.end(), 1);

  AdaptConfig cfg = default_adapt(AdaptMethod::shot);
  cfg.epochs = 10;
  const double before = accuracy(p, target, y);
  const AdaptResult r = adapt_shot(p, target, cfg);
  const double after = accuracy(r.params, target, y);
  CHECK(after >= before);
}

TEST_CASE("adapt_shot: deterministic given seed") {
  const ModelParams p = cluster_model(4);
  const Eigen::MatrixXd target =
      stack(gaussian_blob(30, {-1.0, 0.0}, 11), gaussian_blob(30, {1.0, 0.0}, 12));
  AdaptConfig cfg = default_adapt(AdaptMethod::shot);
  cfg.seed = 5;
  const AdaptResult a = adapt_shot(p, target, cfg);
  const AdaptResult b = adapt_shot(p, target, cfg);
  CHECK(params_fingerprint(a.params) == params_fingerprint(b.params));
}

TEST_CASE("adapt_tent: only BN state changes; dense weights bit-identical") {
  const ModelParams p = cluster_model(5);
  const Eigen::MatrixXd target =
      stack(gaussian_blob(40, {-0.5, 0.8}, 13), gaussian_blob(40, {1.5, 0.8}, 14));
  const AdaptResult r = adapt_tent(p, target, default_adapt(AdaptMethod::tent));
  for (std::size_t l = 0; l < p.extractor.size(); ++l) {
    CHECK((r.params.extractor[l].weight - p.extractor[l].weight).norm() == 0.0);
    CHECK((r.params.extractor[l].bias - p.extractor[l].bias).norm() == 0.0);
  }
  CHECK((r.params.bottleneck.weight - p.bottleneck.weight).norm() == 0.0);
  CHECK((r.params.bottleneck.bias - p.bottleneck.bias).norm() == 0.0);
  CHECK((r.params.classifier.weight - p.classifier.weight).norm() == 0.0);
  CHECK((r.params.classifier.bias - p.classifier.bias).norm() == 0.0);
  CHECK((r.params.bn.gamma - p.bn.gamma).norm() > 0.0);

  // Running statistics equal an independent recomputation over the target.
  ModelParams probe = r.params;
  auto fwd = forward(probe, target, ForwardMode::tent);
  const Eigen::RowVectorXd mean = fwd.cache.bottleneck_pre.colwise().mean();
  const Eigen::RowVectorXd var = (fwd.cache.bottleneck_pre.rowwise() - mean)
                                     .array()
                                     .square()
                                     .matrix()
                                     .colwise()
                                     .mean();
  CHECK((r.params.bn.running_mean - mean.transpose()).cwiseAbs().maxCoeff() <
        1e-12);
  CHECK((r.params.bn.running_var - var.transpose()).cwiseAbs().maxCoeff() <
        1e-12);
}

TEST_CASE("adapt_tent: entropy decreases after one full-batch epoch") {
  const ModelParams p = cluster_model(6);
  const Eigen::MatrixXd target =
      stack(gaussian_blob(48, {-0.8, 0.5}, 15), gaussian_blob(48, {1.2, 0.5}, 16));
  AdaptConfig cfg = default_adapt(AdaptMethod::tent);
  cfg.batch_size = 96;  // single batch per epoch
  cfg.epochs = 1;
  cfg.optimizer = OptKind::sgd;
  cfg.learning_rate = 1e-2;

  ModelParams probe = p;
  const double before =
      entropy_grad(forward(probe, target, ForwardMode::tent).probs).value;
  const AdaptResult r = adapt_tent(p, target, cfg);
  ModelParams probe2 = r.params;
  const double after =
      entropy_grad(forward(probe2, target, ForwardMode::tent).probs).value;
  CHECK(after <= before);
}

TEST_CASE("adapt_tent: entropy gradient wrt BN affine matches finite differences") {
  const ModelParams p = cluster_model(7);
  const Eigen::MatrixXd x =
      stack(gaussian_blob(6, {-0.6, 0.2}, 17), gaussian_blob(6, {0.9, 0.2}, 18));
  ModelParams work = p;
  auto fwd = forward(work, x, ForwardMode::tent);
  const LossGrad ent = entropy_grad(fwd.probs);
  const Gradients grads = backward_from_dlogits(work, fwd.cache, ent.dlogits);

  // Perturb gamma/beta only; the entropy is evaluated in tent mode.
  for (Eigen::Index j = 0; j < work.bn.gamma.size(); ++j) {
    for (auto* slot : {&work.bn.gamma, &work.bn.beta}) {
      const double h = 1e-4;
      const double orig = (*slot)(j);
      (*slot)(j) = orig + h;
      ModelParams up = work;
      const double fup = entropy_grad(forward(up, x, ForwardMode::tent).probs).value;
      (*slot)(j) = orig - h;
      ModelParams dn = work;
      const double fdn = entropy_grad(forward(dn, x, ForwardMode::tent).probs).value;
      (*slot)(j) = orig;
      const double fd = (fup - fdn) / (2.0 * h);
      const double analytic =
          slot == &work.bn.gamma ? grads.bn_gamma(j) : grads.bn_beta(j);
      const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-3});
      CHECK(std::abs(fd - analytic) / denom < 1e-4);
    }
  }
}

TEST_CASE("adapt_tent: missing BN is an architecture error") {
  ModelParams p = cluster_model(8);
  p.bn.gamma.resize(0);
  const Eigen::MatrixXd target = gaussian_blob(10, {0, 0}, 19);
  CHECK_THROWS_AS((void)adapt_tent(p, target, default_adapt(AdaptMethod::tent)),
                  ArchitectureError);
}

TEST_CASE("adapt_pseudo_label: maximally uncertain model returns unchanged") {
  ModelParams p = cluster_model(9);
  // Kill the classifier: probabilities collapse to (0.5, 0.5) everywhere.
  p.classifier.weight.setZero();
  p.classifier.bias.setZero();
  const Eigen::MatrixXd target = gaussian_blob(40, {0.0, 0.0}, 20);
  AdaptConfig cfg = default_adapt(AdaptMethod::pseudo_label);
  cfg.pl_confidence_threshold = 0.999;
  const AdaptResult r = adapt_pseudo_label(p, target, cfg);
  CHECK(r.no_confident_examples);
  CHECK(params_fingerprint(r.params) == params_fingerprint(p));
  REQUIRE(!r.log.empty());
  CHECK(r.log[0].confident_count == 0);
}

TEST_CASE("adapt_pseudo_label: confident correct model keeps its accuracy") {
  const ModelParams p = cluster_model(10);
  const Eigen::MatrixXd t0 = gaussian_blob(50, {-1.5, 0.1}, 21);
  const Eigen::MatrixXd t1 = gaussian_blob(50, {1.5, 0.1}, 22);
  const Eigen::MatrixXd target = stack(t0, t1);
  std::vector<int> y(100, 0);
  std::fill(y.begin() + 50, y.end(), 1);
  REQUIRE(accuracy(p, target, y) >= 0.95);

  // Pseudo-labels on the confident set agree with the truth.
  const Eigen::MatrixXd probs = predict(p, target);
  const auto confident = confident_set(probs, 0.9);
  REQUIRE(confident.size() > 10);
  for (std::size_t i : confident) {
    const int pl = probs(static_cast<Eigen::Index>(i), 1) >= 0.5 ? 1 : 0;
    CHECK(pl == y[i]);
  }

  const AdaptResult r =
      adapt_pseudo_label(p, target, default_adapt(AdaptMethod::pseudo_label));
  CHECK(!r.no_confident_examples);
  CHECK(accuracy(r.params, target, y) >= 0.95);
}

TEST_CASE("adapt_pseudo_label: selected set equals the brute-force filter") {
  const ModelParams p = cluster_model(11);
  const Eigen::MatrixXd target =
      stack(gaussian_blob(30, {-1.0, 0.3}, 23), gaussian_blob(30, {1.3, 0.3}, 24));
  const Eigen::MatrixXd probs = predict(p, target);
  const double tau = 0.85;
  const auto fast = confident_set(probs, tau);
  std::vector<std::size_t> brute;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (std::max(probs(i, 0), probs(i, 1)) >= tau) {
      brute.push_back(static_cast<std::size_t>(i));
    }
  }
  CHECK(fast == brute);
}

TEST_CASE("adapters validate their config") {
  AdaptConfig c = default_adapt(AdaptMethod::shot);
  c.pl_confidence_threshold = 0.4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = default_adapt(AdaptMethod::shot);
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  const ModelParams p = cluster_model(12);
  CHECK_THROWS_AS(
      (void)adapt_shot(p, gaussian_blob(1, {0, 0}, 25), default_adapt(AdaptMethod::shot)),
      BatchSizeError);
}

TEST_CASE("adapt dispatch routes by method") {
  const ModelParams p = cluster_model(13);
  const Eigen::MatrixXd target =
      stack(gaussian_blob(20, {-1.0, 0.0}, 26), gaussian_blob(20, {1.0, 0.0}, 27));
  for (AdaptMethod m :
       {AdaptMethod::shot, AdaptMethod::tent, AdaptMethod::pseudo_label}) {
    const AdaptResult r = adapt(p, target, default_adapt(m));
    CHECK(r.log.size() >= 1);
  }
}
