#include "silobench/similarity.hpp"

#include <nlohmann/json.hpp>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "silobench/errors.hpp"

namespace silobench {

double gower_similarity(const std::vector<ContextValue>& a,
                        const std::vector<ContextValue>& b,
                        const std::vector<AttributeDescriptor>& descriptors) {
  if (a.size() != b.size() || a.size() != descriptors.size()) {
    throw ValidationError("gower: attribute count mismatch");
  }
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].missing || b[i].missing) continue;  // standard Gower exclusion
    if (a[i].kind != descriptors[i].kind || b[i].kind != descriptors[i].kind) {
      throw ValidationError("gower: attribute kind mismatch at " + std::to_string(i));
    }
    if (descriptors[i].kind == FieldKind::numeric) {
      const double range = descriptors[i].max - descriptors[i].min;
      sum += range == 0.0 ? 1.0 : 1.0 - std::abs(a[i].number - b[i].number) / range;
    } else {
      sum += a[i].label == b[i].label ? 1.0 : 0.0;
    }
    ++used;
  }
  if (used == 0) throw Error("gower: no comparable attributes");
  return sum / static_cast<double>(used);
}

SimilarityMatrix SimilarityMatrix::build(
    const std::map<std::string, ContextualProfile>& profiles) {
  if (profiles.size() < 2) throw ConfigError("similarity needs >= 2 institutions");
  SimilarityMatrix m;
  for (const auto& [id, p] : profiles) m.ids_.push_back(id);

  // Population-wide numeric ranges per category/attribute.
  std::array<std::vector<AttributeDescriptor>, kNumContextCategories> desc;
  for (ContextCategory c : all_context_categories()) {
    const auto ci = static_cast<std::size_t>(c);
    std::size_t n_attr = profiles.begin()->second.category(c).size();
    for (const auto& [id, p] : profiles) {
      if (p.category(c).size() != n_attr) {
        throw ValidationError("institution " + id +
                              " has a different attribute count in " +
                              to_string(c));
      }
    }
    desc[ci].resize(n_attr);
    for (std::size_t a = 0; a < n_attr; ++a) {
      AttributeDescriptor d;
      d.kind = profiles.begin()->second.category(c)[a].kind;
      d.min = std::numeric_limits<double>::infinity();
      d.max = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (const auto& [id, p] : profiles) {
        const auto& v = p.category(c)[a];
        if (v.missing) continue;
        if (v.kind != d.kind) {
          throw ValidationError("mixed kinds for attribute " + std::to_string(a) +
                                " of " + to_string(c));
        }
        if (d.kind == FieldKind::numeric) {
          d.min = std::min(d.min, v.number);
          d.max = std::max(d.max, v.number);
        }
        any = true;
      }
      if (!any || d.kind == FieldKind::categorical) {
        d.min = 0.0;
        d.max = 0.0;
      }
      desc[ci][a] = d;
    }
  }

  for (auto ia = profiles.begin(); ia != profiles.end(); ++ia) {
    for (auto ib = ia; ib != profiles.end(); ++ib) {
      SimilarityVector v{};
      for (ContextCategory c : all_context_categories()) {
        const auto ci = static_cast<std::size_t>(c);
        v[ci] = gower_similarity(ia->second.category(c), ib->second.category(c),
                                 desc[ci]);
      }
      m.pairs_[{ia->first, ib->first}] = v;
      m.pairs_[{ib->first, ia->first}] = v;
    }
  }
  return m;
}

SimilarityVector SimilarityMatrix::category_similarity(
    const std::string& source, const std::string& target) const {
  auto it = pairs_.find({source, target});
  if (it == pairs_.end()) {
    throw Error("unknown institution pair (" + source + ", " + target + ")");
  }
  return it->second;
}

std::string SimilarityMatrix::to_csv() const {
  return to_csv(std::map<ContextCategory, double>{});
}

std::string SimilarityMatrix::to_csv(
    const std::map<ContextCategory, double>& weights) const {
  std::ostringstream out;
  out.precision(12);
  out << "source,target";
  for (ContextCategory c : all_context_categories()) out << "," << to_string(c);
  if (!weights.empty()) out << ",overall";
  out << "\n";
  for (const auto& s : ids_) {
    for (const auto& t : ids_) {
      if (s == t) continue;
      const auto v = category_similarity(s, t);
      out << s << "," << t;
      for (ContextCategory c : all_context_categories()) {
        out << "," << v[static_cast<std::size_t>(c)];
      }
      if (!weights.empty()) {
        WeightVector w{weights};
        out << "," << overall_similarity(v, w);
      }
      out << "\n";
    }
  }
  return out.str();
}

// -- OLS ----------------------------------------------------------------------

// Regularized incomplete beta via the standard continued fraction
// (modified Lentz), switching tails for convergence.
double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ValidationError("ibeta: a,b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  if (x > (a + 1.0) / (a + b + 2.0)) {
    return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x);
  }

  const double log_front = a * std::log(x) + b * std::log1p(-x) -
                           std::log(a) -
                           (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
  const double tiny = 1e-300;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double f = d;
  for (int m = 1; m < 300; ++m) {
    const double dm = static_cast<double>(m);
    // even step
    double num = dm * (b - dm) * x / ((a + 2.0 * dm - 1.0) * (a + 2.0 * dm));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    f *= c * d;
    // odd step
    num = -(a + dm) * (a + b + dm) * x /
          ((a + 2.0 * dm) * (a + 2.0 * dm + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    d = 1.0 / d;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    const double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-15) break;
  }
  return std::exp(log_front) * f;
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) throw ValidationError("t p-value: dof must be positive");
  if (std::isinf(t)) return 0.0;
  const double x = dof / (dof + t * t);
  return regularized_incomplete_beta(dof / 2.0, 0.5, x);
}

RegressionFit ols_fit(const Eigen::VectorXd& y, const Eigen::MatrixXd& design,
                      std::vector<std::string> names) {
  const Eigen::Index n = design.rows();
  const Eigen::Index k = design.cols();
  if (y.size() != n) throw ValidationError("ols: y/design size mismatch");
  if (n <= k) throw SingularDesignError("ols: need more observations than columns");

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < k) {
    throw SingularDesignError("ols: design matrix is rank deficient");
  }
  RegressionFit fit;
  fit.n = static_cast<std::size_t>(n);
  fit.beta = qr.solve(y);
  fit.residuals = y - design * fit.beta;
  const double dof = static_cast<double>(n - k);
  const double sigma2 = fit.residuals.squaredNorm() / dof;

  const Eigen::MatrixXd xtx_inv =
      (design.transpose() * design).ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  fit.std_errors = (sigma2 * xtx_inv.diagonal()).array().sqrt().matrix();
  fit.t_values = (fit.beta.array() / fit.std_errors.array()).matrix();
  fit.p_values.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    fit.p_values(i) = student_t_two_sided_p(fit.t_values(i), dof);
  }
  const double ss_res = fit.residuals.squaredNorm();
  const double mean_y = y.mean();
  const double ss_tot = (y.array() - mean_y).square().sum();
  fit.r_squared = ss_tot == 0.0 ? 0.0 : 1.0 - ss_res / ss_tot;
  fit.names = std::move(names);
  if (fit.names.empty()) {
    fit.names.push_back("intercept");
    for (Eigen::Index i = 1; i < k; ++i) {
      fit.names.push_back("x" + std::to_string(i));
    }
  }
  return fit;
}

std::string RegressionFit::to_json() const {
  nlohmann::json j;
  j["n"] = n;
  j["r_squared"] = r_squared;
  j["coefficients"] = nlohmann::json::array();
  for (Eigen::Index i = 0; i < beta.size(); ++i) {
    j["coefficients"].push_back(
        {{"name", i < static_cast<Eigen::Index>(names.size())
                      ? names[static_cast<std::size_t>(i)]
                      : "x" + std::to_string(i)},
         {"beta", beta(i)},
         {"se", std_errors(i)},
         {"t", t_values(i)},
         {"p", p_values(i)}});
  }
  return j.dump(2);
}

// -- weighting & selection ------------------------------------------------------

WeightVector cs_weights(const RegressionFit& fit,
                        const std::vector<ContextCategory>& included) {
  if (included.empty()) throw ConfigError("cs_weights: no categories included");
  std::map<ContextCategory, double> raw;
  double total = 0.0;
  for (ContextCategory c : included) {
    const std::string name = to_string(c);
    auto it = std::find(fit.names.begin(), fit.names.end(), name);
    if (it == fit.names.end()) {
      throw ConfigError("cs_weights: category '" + name + "' not in fit");
    }
    const auto idx = static_cast<Eigen::Index>(it - fit.names.begin());
    const double w = std::abs(fit.beta(idx)) / (1.0 + fit.p_values(idx));
    raw[c] = w;
    total += w;
  }
  if (total == 0.0) {
    throw DegenerateWeightsError("cs_weights: all raw weights are zero");
  }
  WeightVector out;
  for (auto& [c, w] : raw) out.weights[c] = w / total;
  return out;
}

double overall_similarity(const SimilarityVector& sim, const WeightVector& w) {
  if (w.weights.empty()) throw ConfigError("empty weight vector");
  double s = 0.0;
  for (const auto& [c, weight] : w.weights) {
    const double x = sim[static_cast<std::size_t>(c)];
    if (!(x >= 0.0 && x <= 1.0)) {
      throw ValidationError("similarity score outside [0,1]");
    }
    s += weight * x;
  }
  return s;
}

std::string select_msti(const std::string& target,
                        const std::vector<std::string>& candidates,
                        const SimilarityMatrix& sims, const WeightVector& w) {
  std::string best;
  double best_sim = -1.0;
  for (const auto& c : candidates) {
    if (c == target) continue;
    const double s = overall_similarity(sims.category_similarity(c, target), w);
    if (s > best_sim || (s == best_sim && (best.empty() || c < best))) {
      best = c;
      best_sim = s;
    }
  }
  if (best.empty()) throw Error("select_msti: empty candidate pool");
  return best;
}

std::optional<std::string> select_sequential_partner(
    const std::string& target, const std::string& msti,
    const std::vector<std::string>& candidates, const SimilarityMatrix& sims,
    const WeightVector& w, double floor, PartnerReference reference) {
  const std::string& ref = reference == PartnerReference::msti ? msti : target;
  std::optional<std::string> best;
  double best_demo = std::numeric_limits<double>::infinity();
  for (const auto& c : candidates) {
    if (c == target || c == msti) continue;
    const double overall =
        overall_similarity(sims.category_similarity(c, target), w);
    if (!(overall > floor)) continue;
    const double demo = sims.category_similarity(c, ref)[static_cast<std::size_t>(
        ContextCategory::demographic)];
    if (demo < best_demo || (demo == best_demo && best && c < *best)) {
      best = c;
      best_demo = demo;
    }
  }
  return best;
}

}  // namespace silobench
