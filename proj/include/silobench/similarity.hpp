#pragma once

#include <Eigen/Dense>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "silobench/data_model.hpp"

namespace silobench {

// Gower attribute descriptor: population-wide numeric range, or categorical.
struct AttributeDescriptor {
  FieldKind kind = FieldKind::numeric;
  double min = 0.0;
  double max = 0.0;
};

// Mean per-attribute similarity over non-missing attributes:
// numeric 1 - |a-b|/range (zero range -> 1), categorical equality.
// No comparable attributes -> Error.
double gower_similarity(const std::vector<ContextValue>& a,
                        const std::vector<ContextValue>& b,
                        const std::vector<AttributeDescriptor>& descriptors);

using SimilarityVector = std::array<double, kNumContextCategories>;

// Pairwise per-category Gower similarities over an institution population.
// Numeric ranges come from the whole population; symmetric by construction.
class SimilarityMatrix {
 public:
  static SimilarityMatrix build(
      const std::map<std::string, ContextualProfile>& profiles);

  const std::vector<std::string>& institutions() const { return ids_; }
  // Unknown institution -> Error.
  SimilarityVector category_similarity(const std::string& source,
                                       const std::string& target) const;

  std::string to_csv() const;  // source,target,<6 categories>
  std::string to_csv(const std::map<ContextCategory, double>& weights) const;

 private:
  std::vector<std::string> ids_;
  std::map<std::pair<std::string, std::string>, SimilarityVector> pairs_;
};

struct RegressionFit {
  Eigen::VectorXd beta;
  Eigen::VectorXd std_errors;
  Eigen::VectorXd t_values;
  Eigen::VectorXd p_values;  // two-sided, t distribution with n-k dof
  double r_squared = 0.0;
  std::size_t n = 0;
  Eigen::VectorXd residuals;
  std::vector<std::string> names;  // per column, names[0] = intercept

  std::string to_json() const;
};

// Least squares with standard errors from sigma^2 (X'X)^-1 and p-values via
// the regularized incomplete beta. Rank deficiency -> SingularDesignError.
RegressionFit ols_fit(const Eigen::VectorXd& y, const Eigen::MatrixXd& design,
                      std::vector<std::string> names = {});

// Numerics behind the p-values, exposed for direct testing.
double regularized_incomplete_beta(double a, double b, double x);
double student_t_two_sided_p(double t, double dof);

// W_i = |beta_i| / (1 + p_i), normalized to sum 1 over included categories.
struct WeightVector {
  std::map<ContextCategory, double> weights;
};
WeightVector cs_weights(const RegressionFit& fit,
                        const std::vector<ContextCategory>& included);

// sum_i W_i * X_i over the weight's categories.
double overall_similarity(const SimilarityVector& sim, const WeightVector& w);

// Argmax of overall similarity to the target; ties break to the
// lexicographically smaller id. Empty pool -> Error.
std::string select_msti(const std::string& target,
                        const std::vector<std::string>& candidates,
                        const SimilarityMatrix& sims, const WeightVector& w);

enum class PartnerReference { msti, target };

// Among candidates (excluding the MSTI) with overall similarity to the
// target above `floor`, the one least demographically similar to the
// reference institution; nullopt when the filtered pool is empty.
std::optional<std::string> select_sequential_partner(
    const std::string& target, const std::string& msti,
    const std::vector<std::string>& candidates, const SimilarityMatrix& sims,
    const WeightVector& w, double floor = 0.6,
    PartnerReference reference = PartnerReference::msti);

}  // namespace silobench
