#include "silobench/generator.hpp"

#include <nlohmann/json.hpp>
#include <cmath>
#include <random>
#include <sstream>

#include "silobench/errors.hpp"

namespace silobench {

namespace {

constexpr std::size_t kLatentPerCategory = 2;
constexpr std::size_t kLatentDim = kNumContextCategories * kLatentPerCategory;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

// Category centers for universities, relative to the community-college
// population; scaled by the shift knob so a zero-shift universe collapses
// to a single distribution. Large enough that the four universities form
// their own cluster in similarity space.
double university_center(ContextCategory c) {
  switch (c) {
    case ContextCategory::school: return 2.5;
    case ContextCategory::academic: return 2.2;
    case ContextCategory::demographic: return 1.5;
    case ContextCategory::completion: return 2.2;
    case ContextCategory::cost: return 1.8;
    case ContextCategory::financial_aid: return 1.2;
  }
  return 0.0;
}

struct UniverseWeights {
  // Profile attribute projections, per category: (attrs x latent block).
  std::array<Eigen::MatrixXd, kNumContextCategories> profile_numeric;
  std::array<Eigen::VectorXd, kNumContextCategories> profile_categorical;
  // Student feature means and categorical propensities from the full latent.
  Eigen::MatrixXd feature_mean;      // numeric features x latent
  Eigen::MatrixXd cat_propensity;    // categorical features x latent
  // Outcome model: coefficients rotate in the (w0, w_perp) plane by an
  // angle that is a fixed positive combination of per-category latent
  // means, so contextual distance determines coefficient misalignment.
  Eigen::VectorXd w0;                // encoded dim
  Eigen::VectorXd w_perp;            // encoded dim, orthogonal to w0
  Eigen::VectorXd group_skew_dir;    // encoded dim, unit norm
  Eigen::Vector2d demo_to_urm;       // demographic latent -> urm propensity
  Eigen::Vector2d demo_to_female;
  Eigen::VectorXd urm_shift_dir;     // numeric features, unit norm
  Eigen::VectorXd gender_shift_dir;  // numeric features, unit norm
};

// How strongly each category's latent steers the outcome coefficients;
// cost is intentionally weak.
double category_outcome_weight(ContextCategory c) {
  switch (c) {
    case ContextCategory::school: return 1.0;
    case ContextCategory::academic: return 1.0;
    case ContextCategory::demographic: return 0.8;
    case ContextCategory::completion: return 0.8;
    case ContextCategory::cost: return 0.25;
    case ContextCategory::financial_aid: return 0.4;
  }
  return 0.0;
}

Eigen::MatrixXd gaussian_matrix(std::mt19937_64& rng, Eigen::Index rows,
                                Eigen::Index cols, double sd) {
  std::normal_distribution<double> dist(0.0, sd);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

UniverseWeights draw_universe_weights(std::mt19937_64& rng,
                                      const GeneratorConfig& cfg,
                                      const Schema& schema) {
  UniverseWeights w;
  const auto latent = static_cast<Eigen::Index>(kLatentDim);
  for (std::size_t ci = 0; ci < kNumContextCategories; ++ci) {
    // Attributes lean toward the block mean (the component that steers the
    // outcome), with per-attribute spread for texture.
    Eigen::MatrixXd proj = gaussian_matrix(
        rng, static_cast<Eigen::Index>(cfg.numeric_attributes_per_category),
        kLatentPerCategory, 0.35);
    proj.array() += 0.5;
    w.profile_numeric[ci] = proj;
    w.profile_categorical[ci] =
        gaussian_matrix(rng, kLatentPerCategory, 1, 1.0);
  }

  std::size_t n_numeric = 0, n_categorical = 0;
  for (const auto& f : schema.fields()) {
    (f.kind == FieldKind::numeric ? n_numeric : n_categorical) += 1;
  }
  w.feature_mean =
      gaussian_matrix(rng, static_cast<Eigen::Index>(n_numeric), latent, 0.4);
  w.cat_propensity = gaussian_matrix(
      rng, static_cast<Eigen::Index>(n_categorical), latent, 0.4);

  const auto enc = static_cast<Eigen::Index>(schema.encoded_dim());
  Eigen::VectorXd raw = gaussian_matrix(rng, enc, 1, 1.0);
  w.w0 = raw / raw.norm() * cfg.outcome.signal_scale;
  Eigen::VectorXd perp = gaussian_matrix(rng, enc, 1, 1.0);
  perp -= perp.dot(w.w0) / w.w0.squaredNorm() * w.w0;
  w.w_perp = perp / perp.norm() * cfg.outcome.signal_scale;

  Eigen::VectorXd skew = gaussian_matrix(rng, enc, 1, 1.0);
  w.group_skew_dir = skew / skew.norm();
  w.demo_to_urm = Eigen::Vector2d(gaussian_matrix(rng, 2, 1, 0.6));
  w.demo_to_female = Eigen::Vector2d(gaussian_matrix(rng, 2, 1, 0.4));

  // Demographic feature shifts lean toward the outcome direction so group
  // membership separates the score distributions, not only the labels.
  const Eigen::VectorXd w0_numeric = w.w0.head(static_cast<Eigen::Index>(n_numeric));
  auto aligned_dir = [&](double align) {
    Eigen::VectorXd d =
        gaussian_matrix(rng, static_cast<Eigen::Index>(n_numeric), 1, 1.0);
    d = align * w0_numeric / w0_numeric.norm() + (1.0 - align) * d / d.norm();
    return Eigen::VectorXd(d / d.norm());
  };
  w.urm_shift_dir = aligned_dir(0.75);
  w.gender_shift_dir = aligned_dir(0.6);
  return w;
}

// Outcome-side compensation for the demographic feature shifts: scale 1
// cancels the rate effect entirely (groups score apart but retain at
// similar rates, i.e. the scores are group-miscalibrated), scale 0 lets
// the shifts flow straight into the base rates.
double group_intercept_offset(double urm_sign, double gender_sign,
                              double urm_logit_shift, double gender_logit_shift,
                              double scale) {
  return -scale * (urm_sign * urm_logit_shift + gender_sign * gender_logit_shift);
}

}  // namespace

Schema default_synthetic_schema() {
  std::vector<FieldSpec> fields;
  for (const char* name : {"hs_gpa", "age_entry", "credits_attempted",
                           "math_placement", "engagement_index",
                           "family_income_pct"}) {
    fields.push_back({name, FieldKind::numeric, {}});
  }
  fields.push_back(
      {"enrollment_intensity", FieldKind::categorical, {"full_time", "part_time"}});
  fields.push_back({"first_gen", FieldKind::categorical, {"no", "yes"}});
  return Schema(std::move(fields));
}

void GeneratorConfig::validate() const {
  if (universities + community_colleges < 2) {
    throw ConfigError("need at least 2 institutions");
  }
  if (community_colleges == 0) {
    throw ConfigError("need at least 1 community college (targets)");
  }
  if (records_per_institution == 0) {
    throw ConfigError("records_per_institution must be positive");
  }
  if (cohorts.first > cohorts.last) throw ConfigError("bad cohort range");
  if (numeric_attributes_per_category == 0) {
    throw ConfigError("need at least one numeric attribute per category");
  }
  for (double m : context_shift.magnitude) {
    if (m < 0.0) throw ConfigError("context shift must be >= 0");
  }
}

std::vector<InstitutionSilo> generate_universe(const GeneratorConfig& config,
                                               std::uint64_t seed) {
  config.validate();
  const Schema schema = default_synthetic_schema();
  std::mt19937_64 rng(seed);
  const UniverseWeights w = draw_universe_weights(rng, config, schema);

  std::normal_distribution<double> stdnorm(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> year_dist(config.cohorts.first,
                                               config.cohorts.last);

  // Idiosyncratic (non-contextual) effects scale with the average shift so
  // the zero-shift universe collapses to one retention process.
  double mean_shift = 0.0;
  for (double m : config.context_shift.magnitude) mean_shift += m;
  mean_shift /= static_cast<double>(kNumContextCategories);

  std::size_t n_numeric = 0;
  for (const auto& f : schema.fields()) {
    if (f.kind == FieldKind::numeric) ++n_numeric;
  }

  std::vector<InstitutionSilo> universe;
  const std::size_t total = config.universities + config.community_colleges;
  for (std::size_t s = 0; s < total; ++s) {
    const bool is_university = s < config.universities;
    std::ostringstream id;
    if (is_university) {
      id << "U" << (s < 9 ? "0" : "") << (s + 1);
    } else {
      const std::size_t c = s - config.universities + 1;
      id << "C" << (c < 10 ? "0" : "") << c;
    }

    // Latent context, block per category. A silo-level common factor
    // correlates the six categories (institutional characteristics move
    // together), leaving per-category idiosyncrasies on top.
    constexpr double kCommonFactorLoad = 0.75;
    const double common = stdnorm(rng);
    Eigen::VectorXd latent(kLatentDim);
    for (std::size_t ci = 0; ci < kNumContextCategories; ++ci) {
      const double shift = config.context_shift.magnitude[ci];
      const double center =
          is_university
              ? university_center(all_context_categories()[ci])
              : 0.0;
      for (std::size_t d = 0; d < kLatentPerCategory; ++d) {
        latent(static_cast<Eigen::Index>(ci * kLatentPerCategory + d)) =
            shift * (center + kCommonFactorLoad * common +
                     std::sqrt(1.0 - kCommonFactorLoad * kCommonFactorLoad) *
                         stdnorm(rng));
      }
    }

    // Public profile: deterministic smooth image of the latent.
    ContextualProfile profile;
    for (std::size_t ci = 0; ci < kNumContextCategories; ++ci) {
      const ContextCategory cat = all_context_categories()[ci];
      const Eigen::Vector2d block =
          latent.segment(static_cast<Eigen::Index>(ci * kLatentPerCategory),
                         kLatentPerCategory);
      const Eigen::VectorXd nums = w.profile_numeric[ci] * block;
      for (Eigen::Index a = 0; a < nums.size(); ++a) {
        profile.category(cat).push_back(
            {FieldKind::numeric, nums(a), "", false});
      }
      for (std::size_t a = 0; a < config.categorical_attributes_per_category;
           ++a) {
        const double v = w.profile_categorical[ci].dot(block);
        const char* level = v < -0.8 ? "low" : v > 0.8 ? "high" : "mid";
        profile.category(cat).push_back(
            {FieldKind::categorical, 0.0, level, false});
      }
    }

    // Silo-level retention process.
    const Eigen::Vector2d demo_block = latent.segment(
        static_cast<Eigen::Index>(
            static_cast<std::size_t>(ContextCategory::demographic) *
            kLatentPerCategory),
        kLatentPerCategory);
    const Eigen::Vector2d completion_block = latent.segment(
        static_cast<Eigen::Index>(
            static_cast<std::size_t>(ContextCategory::completion) *
            kLatentPerCategory),
        kLatentPerCategory);

    const double p_urm =
        std::clamp(sigmoid(logit(0.42) + w.demo_to_urm.dot(demo_block)), 0.05, 0.95);
    const double p_female = std::clamp(
        sigmoid(logit(0.48) + w.demo_to_female.dot(demo_block)), 0.1, 0.9);
    const double p_other = 0.03;

    const double skew_idio = stdnorm(rng);
    const double skew =
        config.outcome.group_slope_skew *
        (1.0 +
         config.outcome.skew_demo_coupling * std::tanh(demo_block.mean()) +
         config.outcome.skew_noise * mean_shift * skew_idio);
    const double intercept_idio = 0.1 * mean_shift * stdnorm(rng);
    const double b =
        config.outcome.base_logit +
        (is_university ? config.outcome.university_bonus : 0.0) +
        config.outcome.completion_coupling * completion_block.mean() +
        intercept_idio;

    // Coefficient rotation angle from the category latents; saturating so
    // very distant contexts stay partially informative rather than flipping.
    double theta_raw = 0.0;
    for (std::size_t ci = 0; ci < kNumContextCategories; ++ci) {
      const double u = latent
                           .segment(static_cast<Eigen::Index>(
                                        ci * kLatentPerCategory),
                                    kLatentPerCategory)
                           .mean();
      theta_raw += category_outcome_weight(all_context_categories()[ci]) * u;
    }
    constexpr double kThetaMax = 1.1;
    const double theta =
        kThetaMax * std::tanh(config.outcome.coef_drift * theta_raw / kThetaMax);
    const Eigen::VectorXd w_silo =
        std::cos(theta) * w.w0 + std::sin(theta) * w.w_perp;
    const auto n_num = static_cast<Eigen::Index>(n_numeric);
    const double urm_logit_shift =
        config.outcome.urm_feature_shift * w_silo.head(n_num).dot(w.urm_shift_dir);
    const double gender_logit_shift =
        config.outcome.gender_feature_shift *
        w_silo.head(n_num).dot(w.gender_shift_dir);

    std::vector<StudentRecord> records;
    records.reserve(config.records_per_institution);
    std::vector<std::vector<double>> raw_one(1);
    const Eigen::VectorXd feat_mu = w.feature_mean * latent;
    const Eigen::VectorXd cat_mu = w.cat_propensity * latent;
    for (std::size_t r = 0; r < config.records_per_institution; ++r) {
      StudentRecord rec;
      rec.cohort_year = year_dist(rng);
      const double ug = unif(rng);
      rec.gender = ug < p_other ? Gender::other
                   : ug < p_other + (1.0 - p_other) * p_female ? Gender::female
                                                               : Gender::male;
      rec.urm = unif(rng) < p_urm;

      rec.features.resize(schema.size());
      // Feature means carry demographic structure, so model scores separate
      // by group and base-rate matched thresholds have something to fix.
      const double urm_sign = rec.urm ? -1.0 : 1.0;
      const double gender_sign = rec.gender == Gender::female ? 1.0
                                 : rec.gender == Gender::male ? -1.0
                                                              : 0.0;
      std::size_t ni = 0, ci = 0;
      for (std::size_t f = 0; f < schema.size(); ++f) {
        if (schema.fields()[f].kind == FieldKind::numeric) {
          const auto k = static_cast<Eigen::Index>(ni);
          rec.features[f] =
              feat_mu(k) +
              urm_sign * config.outcome.urm_feature_shift * w.urm_shift_dir(k) +
              gender_sign * config.outcome.gender_feature_shift *
                  w.gender_shift_dir(k) +
              stdnorm(rng);
          ++ni;
        } else {
          const double p1 = sigmoid(cat_mu(static_cast<Eigen::Index>(ci)));
          rec.features[f] = unif(rng) < p1 ? 1.0 : 0.0;
          ++ci;
        }
      }

      raw_one[0] = rec.features;
      const Eigen::VectorXd enc = schema.encode(raw_one).row(0).transpose();
      const double s_g = rec.urm ? 1.0 : -1.0;
      const double z = (w_silo + skew * s_g * w.group_skew_dir).dot(enc) + b +
                       group_intercept_offset(
                           urm_sign, gender_sign, urm_logit_shift,
                           gender_logit_shift, config.outcome.group_offset_scale);
      rec.retained = unif(rng) < sigmoid(z);
      records.push_back(std::move(rec));
    }

    universe.emplace_back(id.str(),
                          is_university ? SiloKind::university
                                        : SiloKind::community_college,
                          std::move(records), std::move(profile), schema);
  }
  return universe;
}

// -- config JSON ----------------------------------------------------------------

GeneratorConfig GeneratorConfig::from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("generator config JSON: ") + e.what());
  }
  GeneratorConfig c;
  c.universities = j.value("universities", c.universities);
  c.community_colleges = j.value("community_colleges", c.community_colleges);
  c.records_per_institution =
      j.value("records_per_institution", c.records_per_institution);
  if (j.contains("cohorts")) {
    c.cohorts.first = j["cohorts"].at(0).get<int>();
    c.cohorts.last = j["cohorts"].at(1).get<int>();
  }
  if (j.contains("context_shift")) {
    for (ContextCategory cat : all_context_categories()) {
      const std::string name = to_string(cat);
      if (j["context_shift"].contains(name)) {
        c.context_shift[cat] = j["context_shift"][name].get<double>();
      }
    }
  }
  if (j.contains("outcome")) {
    const auto& o = j["outcome"];
    auto& m = c.outcome;
    m.signal_scale = o.value("signal_scale", m.signal_scale);
    m.coef_drift = o.value("coef_drift", m.coef_drift);
    m.base_logit = o.value("base_logit", m.base_logit);
    m.university_bonus = o.value("university_bonus", m.university_bonus);
    m.completion_coupling = o.value("completion_coupling", m.completion_coupling);
    m.group_offset_scale = o.value("group_offset_scale", m.group_offset_scale);
    m.group_slope_skew = o.value("group_slope_skew", m.group_slope_skew);
    m.skew_demo_coupling = o.value("skew_demo_coupling", m.skew_demo_coupling);
    m.skew_noise = o.value("skew_noise", m.skew_noise);
    m.urm_feature_shift = o.value("urm_feature_shift", m.urm_feature_shift);
    m.gender_feature_shift =
        o.value("gender_feature_shift", m.gender_feature_shift);
  }
  c.numeric_attributes_per_category = j.value(
      "numeric_attributes_per_category", c.numeric_attributes_per_category);
  c.categorical_attributes_per_category =
      j.value("categorical_attributes_per_category",
              c.categorical_attributes_per_category);
  c.validate();
  return c;
}

std::string GeneratorConfig::to_json() const {
  nlohmann::json j;
  j["universities"] = universities;
  j["community_colleges"] = community_colleges;
  j["records_per_institution"] = records_per_institution;
  j["cohorts"] = {cohorts.first, cohorts.last};
  for (ContextCategory cat : all_context_categories()) {
    j["context_shift"][to_string(cat)] =
        context_shift.magnitude[static_cast<std::size_t>(cat)];
  }
  j["outcome"] = {{"signal_scale", outcome.signal_scale},
                  {"coef_drift", outcome.coef_drift},
                  {"base_logit", outcome.base_logit},
                  {"university_bonus", outcome.university_bonus},
                  {"completion_coupling", outcome.completion_coupling},
                  {"group_offset_scale", outcome.group_offset_scale},
                  {"group_slope_skew", outcome.group_slope_skew},
                  {"skew_demo_coupling", outcome.skew_demo_coupling},
                  {"skew_noise", outcome.skew_noise},
                  {"urm_feature_shift", outcome.urm_feature_shift},
                  {"gender_feature_shift", outcome.gender_feature_shift}};
  j["numeric_attributes_per_category"] = numeric_attributes_per_category;
  j["categorical_attributes_per_category"] = categorical_attributes_per_category;
  return j.dump(2);
}

}  // namespace silobench
