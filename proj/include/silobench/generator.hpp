#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "silobench/data_model.hpp"

namespace silobench {

// Per-category spread of the latent institutional context. 0 = every silo
// drawn from one distribution; larger values push silos apart in that
// category, in both their public profiles and their data-generating process.
struct ContextShift {
  std::array<double, kNumContextCategories> magnitude = {1.0, 1.0, 1.0,
                                                         1.0, 1.0, 1.0};

  double operator[](ContextCategory c) const {
    return magnitude[static_cast<std::size_t>(c)];
  }
  double& operator[](ContextCategory c) {
    return magnitude[static_cast<std::size_t>(c)];
  }
};

// Knobs of the synthetic retention process. The outcome is a logistic link
// over encoded features; coefficients, intercepts, and group effects all
// drift smoothly with the institutional context latent, so contextual
// similarity is causally tied to transferability.
struct OutcomeModel {
  double signal_scale = 1.8;         // strength of the feature->outcome link
  double coef_drift = 0.5;           // coefficient drift per unit of context
  double base_logit = 0.35;          // community-college intercept
  double university_bonus = 0.9;     // universities retain more
  double completion_coupling = 0.4;  // intercept coupling to completion latent
  double group_offset_scale = 0.8;   // fraction of group score shift offset in outcome
  double group_slope_skew = 0.12;    // group-dependent slopes -> AUC gaps
  double skew_demo_coupling = 0.0;   // ties slope skew to demographic latent
  double skew_noise = 0.5;           // idiosyncratic per-silo skew spread
  double urm_feature_shift = 0.8;    // URM feature-mean shift (score separation)
  double gender_feature_shift = 0.4;
};

struct GeneratorConfig {
  std::size_t universities = 4;
  std::size_t community_colleges = 23;
  std::size_t records_per_institution = 1500;
  YearRange cohorts{2013, 2019};
  ContextShift context_shift;
  OutcomeModel outcome;
  std::size_t numeric_attributes_per_category = 4;
  std::size_t categorical_attributes_per_category = 1;

  void validate() const;  // throws ConfigError on nonpositive sizes

  static GeneratorConfig from_json(const std::string& json_text);
  std::string to_json() const;
};

// The shared student-level schema used by generated universes.
Schema default_synthetic_schema();

// Deterministic for a fixed (config, seed). Silo ids: U01..Unn universities,
// C01..Cnn community colleges.
std::vector<InstitutionSilo> generate_universe(const GeneratorConfig& config,
                                               std::uint64_t seed);

}  // namespace silobench
