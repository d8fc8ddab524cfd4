#include <doctest.h>

#include <cmath>
#include <numeric>

#include "silobench/errors.hpp"
#include "silobench/generator.hpp"
#include "silobench/metrics.hpp"
#include "silobench/network.hpp"
#include "silobench/similarity.hpp"

using namespace silobench;

namespace {

GeneratorConfig small_config() {
  GeneratorConfig c;
  c.universities = 1;
  c.community_colleges = 4;
  c.records_per_institution = 300;
  return c;
}

SimilarityMatrix sims_of(const std::vector<InstitutionSilo>& universe) {
  std::map<std::string, ContextualProfile> profiles;
  for (const auto& s : universe) profiles.emplace(s.id(), s.context());
  return SimilarityMatrix::build(profiles);
}

// Mean pairwise Wasserstein distance between per-silo marginals of the
// first numeric feature.
double mean_pairwise_feature_distance(const std::vector<InstitutionSilo>& u,
                                      const CohortSplit& split) {
  std::vector<std::vector<double>> marginals;
  for (const auto& s : u) {
    const Eigen::MatrixXd x = s.test_features(split);
    marginals.emplace_back(x.col(0).data(), x.col(0).data() + x.rows());
  }
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < marginals.size(); ++i) {
    for (std::size_t j = i + 1; j < marginals.size(); ++j) {
      total += wasserstein_1d(marginals[i], marginals[j]);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("generate_universe: deterministic for a fixed seed") {
  const auto a = generate_universe(small_config(), 7);
  const auto b = generate_universe(small_config(), 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id() == b[i].id());
    CHECK(a[i].record_count() == b[i].record_count());
    const auto xa = a[i].test_features({});
    const auto xb = b[i].test_features({});
    CHECK((xa - xb).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a[i].historical_retention_rate({}) == b[i].historical_retention_rate({}));
  }
  const auto c = generate_universe(small_config(), 8);
  CHECK((a[0].test_features({}) - c[0].test_features({})).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("generate_universe: paper-scale topology") {
  GeneratorConfig cfg;
  cfg.records_per_institution = 40;  // topology check only
  const auto u = generate_universe(cfg, 1);
  REQUIRE(u.size() == 27);
  std::size_t universities = 0, colleges = 0;
  for (const auto& s : u) {
    (s.kind() == SiloKind::university ? universities : colleges) += 1;
  }
  CHECK(universities == 4);
  CHECK(colleges == 23);
  CHECK(u[0].id() == "U01");
  CHECK(u[4].id() == "C01");
  // 7 cohorts present
  std::size_t with_all_years = 0;
  for (int y = 2013; y <= 2019; ++y) {
    if (u[5].cohort_count(y) > 0) ++with_all_years;
  }
  CHECK(with_all_years == 7);
}

TEST_CASE("generate_universe: zero shift collapses to one distribution") {
  GeneratorConfig cfg = small_config();
  for (ContextCategory c : all_context_categories()) cfg.context_shift[c] = 0.0;
  const auto u = generate_universe(cfg, 3);
  const SimilarityMatrix sims = sims_of(u);
  for (const auto& a : sims.institutions()) {
    for (const auto& b : sims.institutions()) {
      const SimilarityVector v = sims.category_similarity(a, b);
      for (double x : v) CHECK(x >= 0.9);
      // zero numeric ranges -> similarity exactly 1 by convention
      CHECK(std::accumulate(v.begin(), v.end(), 0.0) ==
            doctest::Approx(6.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("generate_universe: invalid config") {
  GeneratorConfig cfg = small_config();
  cfg.records_per_institution = 0;
  CHECK_THROWS_AS((void)generate_universe(cfg, 1), ConfigError);
  GeneratorConfig cfg2 = small_config();
  cfg2.community_colleges = 0;
  CHECK_THROWS_AS((void)generate_universe(cfg2, 1), ConfigError);
}

TEST_CASE("generator monotonicity: a larger shift knob never shrinks the "
          "expected distributional distance") {
  // Sampled estimate over several seeds at two knob values, 3-SE tolerance.
  const CohortSplit split;
  auto mean_distance_at = [&](double knob, std::vector<double>& samples) {
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      GeneratorConfig cfg;
      cfg.universities = 0;
      cfg.community_colleges = 5;
      cfg.records_per_institution = 250;
      for (ContextCategory c : all_context_categories()) {
        cfg.context_shift[c] = 0.4;
      }
      cfg.context_shift[ContextCategory::academic] = knob;
      samples.push_back(
          mean_pairwise_feature_distance(generate_universe(cfg, seed), split));
    }
  };
  std::vector<double> lo, hi;
  mean_distance_at(0.3, lo);
  mean_distance_at(1.5, hi);
  const auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const auto se = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    s2 /= static_cast<double>(v.size() - 1);
    return std::sqrt(s2 / static_cast<double>(v.size()));
  };
  const double tolerance = 3.0 * std::sqrt(se(lo) * se(lo) + se(hi) * se(hi));
  CHECK(mean(hi) >= mean(lo) - tolerance);
}

TEST_CASE("generated silos: retention rates and demographics vary but stay sane") {
  const auto u = generate_universe(small_config(), 11);
  for (const auto& s : u) {
    const double rate = s.historical_retention_rate({});
    CHECK(rate > 0.05);
    CHECK(rate < 0.98);
    const auto sizes = s.group_sizes({}, false);
    CHECK(sizes.size() >= 2);  // demographic mix present
  }
}

TEST_CASE("generator config JSON round trip") {
  GeneratorConfig cfg = small_config();
  cfg.context_shift[ContextCategory::cost] = 0.25;
  cfg.outcome.group_slope_skew = 0.4;
  const GeneratorConfig back = GeneratorConfig::from_json(cfg.to_json());
  CHECK(back.universities == cfg.universities);
  CHECK(back.context_shift[ContextCategory::cost] == 0.25);
  CHECK(back.outcome.group_slope_skew == 0.4);
  CHECK(back.to_json() == cfg.to_json());
}
