#include <doctest.h>

#include "silobench/errors.hpp"
#include "silobench/orchestrator.hpp"
#include "silobench/training.hpp"
#include "test_helpers.hpp"

using namespace silobench;
using test_helpers::separable_silo;

namespace {

TrainConfig fast_config() {
  TrainConfig c;
  c.epochs = 8;
  c.batch_size = 32;
  c.learning_rate = 5e-3;
  c.arch.extractor_widths = {16, 8};
  c.arch.bottleneck_width = 6;
  return c;
}

TransferArtifact artifact_from(const ModelParams& params,
                               std::optional<FisherDiagonal> fisher) {
  return make_artifact(params, std::move(fisher), {"A"}, "test");
}

}  // namespace

TEST_CASE("train_local: lr=0 leaves parameters at initialization") {
  const InstitutionSilo silo = separable_silo("S", 120, 1);
  TrainConfig cfg = fast_config();
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  const TrainResult r = train_local(silo, {}, cfg);
  const ModelParams fresh = init_params(silo.schema().encoded_dim(), cfg.arch, cfg.seed);
  // Learnable tensors untouched; only BN running statistics may move.
  CHECK((r.params.bottleneck.weight - fresh.bottleneck.weight).norm() == 0.0);
  CHECK((r.params.classifier.weight - fresh.classifier.weight).norm() == 0.0);
  CHECK((r.params.bn.gamma - fresh.bn.gamma).norm() == 0.0);
  CHECK((r.params.bn.running_mean - fresh.bn.running_mean).norm() > 0.0);
}

TEST_CASE("train_local: deterministic for fixed seed and config") {
  const InstitutionSilo silo = separable_silo("S", 150, 2);
  const TrainConfig cfg = fast_config();
  const TrainResult a = train_local(silo, {}, cfg);
  const TrainResult b = train_local(silo, {}, cfg);
  CHECK(params_fingerprint(a.params) == params_fingerprint(b.params));
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].mean_loss == b.log[i].mean_loss);
  }
  TrainConfig other = cfg;
  other.seed = 99;
  const TrainResult c = train_local(silo, {}, other);
  CHECK(params_fingerprint(a.params) != params_fingerprint(c.params));
}

TEST_CASE("train_local: linearly separable silo reaches high accuracy") {
  const InstitutionSilo silo = separable_silo("S", 200, 3);
  TrainConfig cfg = fast_config();
  cfg.epochs = 40;
  const TrainResult r = train_local(silo, {}, cfg);
  CHECK(r.log.back().train_accuracy >= 0.95);
  CHECK(r.log.size() == cfg.epochs);
}

TEST_CASE("train_local: training log serializes as JSON lines") {
  const InstitutionSilo silo = separable_silo("S", 80, 4);
  TrainConfig cfg = fast_config();
  cfg.epochs = 2;
  const TrainResult r = train_local(silo, {}, cfg);
  const std::string log = train_log_jsonl(r.log);
  CHECK(std::count(log.begin(), log.end(), '\n') == 2);
  CHECK(log.find("mean_loss") != std::string::npos);
}

TEST_CASE("compute_fisher_diagonal: nonnegative, zero for a constant model") {
  const InstitutionSilo silo = separable_silo("S", 60, 5);
  TrainConfig cfg = fast_config();
  ModelParams params = init_params(silo.schema().encoded_dim(), cfg.arch, 1);

  SUBCASE("entries are nonnegative for a random model") {
    const FisherDiagonal f = compute_fisher_diagonal(params, silo, {}, 2000, 0);
    double min_entry = 0.0;
    for_each_tensor(f, [&min_entry](const Eigen::Ref<const Eigen::MatrixXd>& t) {
      if (t.size() > 0) min_entry = std::min(min_entry, t.minCoeff());
    });
    CHECK(min_entry >= 0.0);
  }
  SUBCASE("degenerate constant model has zero gradients almost everywhere") {
    // Zeroing every weight makes logits constant in the input; the only
    // nonzero log-likelihood gradients live in the classifier head.
    for (auto& l : params.extractor) {
      l.weight.setZero();
      l.bias.setZero();
    }
    params.bottleneck.weight.setZero();
    params.bottleneck.bias.setZero();
    params.bn.gamma.setZero();
    params.classifier.weight.setZero();
    params.classifier.bias.setZero();
    const FisherDiagonal f = compute_fisher_diagonal(params, silo, {}, 2000, 0);
    for (const auto& l : f.extractor) {
      CHECK(l.weight.cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(f.bottleneck.weight.cwiseAbs().maxCoeff() == 0.0);
    // p = (1/2, 1/2) everywhere: classifier bias gradient for sampled label y
    // is p - e_y, nonzero; expectation of its square is strictly positive.
    CHECK(f.classifier.bias.minCoeff() > 0.0);
  }
  SUBCASE("full-sample cap makes the result seed independent") {
    const FisherDiagonal a = compute_fisher_diagonal(params, silo, {}, 10000, 1);
    const FisherDiagonal b = compute_fisher_diagonal(params, silo, {}, 10000, 2);
    double max_diff = 0.0;
    auto pair_diff = [&max_diff](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
      max_diff = std::max(max_diff, (x - y).cwiseAbs().maxCoeff());
    };
    pair_diff(a.bottleneck.weight, b.bottleneck.weight);
    pair_diff(a.classifier.weight, b.classifier.weight);
    pair_diff(a.bn_gamma, b.bn_gamma);
    CHECK(max_diff == 0.0);
  }
  SUBCASE("binding cap subsamples deterministically per seed") {
    const FisherDiagonal a = compute_fisher_diagonal(params, silo, {}, 20, 7);
    const FisherDiagonal b = compute_fisher_diagonal(params, silo, {}, 20, 7);
    CHECK((a.classifier.weight - b.classifier.weight).norm() == 0.0);
  }
}

TEST_CASE("ewc penalty: zero at the anchor, positive elsewhere") {
  const InstitutionSilo silo = separable_silo("S", 80, 6);
  TrainConfig cfg = fast_config();
  const TrainResult r = train_local(silo, {}, cfg);
  const FisherDiagonal f = compute_fisher_diagonal(r.params, silo, {}, 2000, 0);
  CHECK(ewc_penalty_value(r.params, r.params, f, 1.0) == 0.0);
  ModelParams moved = r.params;
  moved.classifier.weight.array() += 0.05;
  CHECK(ewc_penalty_value(moved, r.params, f, 1.0) > 0.0);
  CHECK(ewc_penalty_value(moved, r.params, f, 0.0) == 0.0);
}

TEST_CASE("train_sequential_ewc: lambda=0 is bitwise plain fine-tuning") {
  const InstitutionSilo a = separable_silo("A", 120, 7);
  const InstitutionSilo b = separable_silo("B", 120, 8, 0.2);
  TrainConfig cfg = fast_config();
  const TrainResult stage1 = train_local(a, {}, cfg);

  TrainConfig cfg0 = cfg;
  cfg0.ewc_lambda = 0.0;
  const TrainResult seq =
      train_sequential_ewc(artifact_from(stage1.params, std::nullopt), b, {}, cfg0);
  const TrainResult ft = fine_tune(stage1.params, b, {}, cfg0);
  CHECK(params_fingerprint(seq.params) == params_fingerprint(ft.params));
}

TEST_CASE("train_sequential_ewc: missing Fisher with lambda>0 is an artifact error") {
  const InstitutionSilo a = separable_silo("A", 90, 9);
  const InstitutionSilo b = separable_silo("B", 90, 10);
  TrainConfig cfg = fast_config();
  const TrainResult stage1 = train_local(a, {}, cfg);
  TrainConfig cfg1 = cfg;
  cfg1.ewc_lambda = 1.0;
  CHECK_THROWS_AS((void)train_sequential_ewc(
                      artifact_from(stage1.params, std::nullopt), b, {}, cfg1),
                  ArtifactError);
}

TEST_CASE("train_sequential_ewc: huge lambda pins parameters to the anchor") {
  const InstitutionSilo a = separable_silo("A", 120, 11);
  const InstitutionSilo b = separable_silo("B", 120, 12, 0.3);
  TrainConfig cfg = fast_config();
  cfg.epochs = 6;
  const TrainResult stage1 = train_local(a, {}, cfg);
  FisherDiagonal fisher = compute_fisher_diagonal(stage1.params, a, {}, 2000, 0);
  // A uniformly positive Fisher floor makes the quadratic anchor bind every
  // coordinate, not only the well-identified ones.
  for_each_tensor(fisher, [](Eigen::Ref<Eigen::MatrixXd> t) {
    t.array() += 1.0;
  });
  TrainConfig big = cfg;
  big.ewc_lambda = 1e8;
  big.optimizer = OptKind::sgd;
  big.learning_rate = 1e-9;  // keep the quadratic step stable
  const TrainResult seq =
      train_sequential_ewc(artifact_from(stage1.params, fisher), b, {}, big);
  double max_move = 0.0;
  auto diff = [&max_move](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    max_move = std::max(max_move, (x - y).cwiseAbs().maxCoeff());
  };
  diff(seq.params.bottleneck.weight, stage1.params.bottleneck.weight);
  diff(seq.params.classifier.weight, stage1.params.classifier.weight);
  diff(seq.params.bn.gamma, stage1.params.bn.gamma);
  for (std::size_t l = 0; l < seq.params.extractor.size(); ++l) {
    diff(seq.params.extractor[l].weight, stage1.params.extractor[l].weight);
  }
  CHECK(max_move < 1e-3);
}

TEST_CASE("train_sequential_ewc: mitigates forgetting on a two-silo example") {
  // Silo A and silo B disagree on the second feature's sign; training on B
  // after A erases A-specific fit unless the EWC anchor holds it.
  auto make_silo = [](const std::string& id, double w1, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> norm(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<StudentRecord> records;
    for (int i = 0; i < 260; ++i) {
      StudentRecord r;
      r.cohort_year = 2013 + i % 7;
      const double x0 = norm(rng), x1 = norm(rng);
      r.features = {x0, x1, unif(rng) < 0.5 ? 0.0 : 1.0};
      r.gender = unif(rng) < 0.5 ? Gender::female : Gender::male;
      r.urm = unif(rng) < 0.4;
      r.retained = x0 + w1 * x1 > 0.0;
      records.push_back(std::move(r));
    }
    ContextualProfile profile;
    for (ContextCategory c : all_context_categories()) {
      profile.category(c).push_back({FieldKind::numeric, 0.0, "", false});
    }
    return InstitutionSilo(id, SiloKind::community_college, std::move(records),
                           std::move(profile), test_helpers::tiny_schema());
  };
  const InstitutionSilo a = make_silo("A", 1.5, 21);
  const InstitutionSilo b = make_silo("B", -1.5, 22);

  TrainConfig cfg = fast_config();
  cfg.epochs = 25;
  const TrainResult stage1 = train_local(a, {}, cfg);
  const FisherDiagonal fisher = compute_fisher_diagonal(stage1.params, a, {}, 2000, 0);

  TrainConfig plain = cfg;
  plain.epochs = 12;
  const TrainResult forgot = fine_tune(stage1.params, b, {}, plain);
  TrainConfig anchored = plain;
  anchored.ewc_lambda = 25.0;
  const TrainResult kept =
      train_sequential_ewc(artifact_from(stage1.params, fisher), b, {}, anchored);

  const EvalConfig eval;
  const MetricReport plain_on_a = evaluate_on_silo(forgot.params, a, {}, eval);
  const MetricReport kept_on_a = evaluate_on_silo(kept.params, a, {}, eval);
  REQUIRE(plain_on_a.auc.has_value());
  REQUIRE(kept_on_a.auc.has_value());
  CHECK(*kept_on_a.auc >= *plain_on_a.auc);
}

TEST_CASE("train config validation") {
  TrainConfig c = fast_config();
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = fast_config();
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = fast_config();
  c.ewc_lambda = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
