// Python bindings for the main operations: metrics, similarity statistics,
// threshold policies, and the experiment driver.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "silobench/errors.hpp"
#include "silobench/generator.hpp"
#include "silobench/metrics.hpp"
#include "silobench/orchestrator.hpp"
#include "silobench/similarity.hpp"
#include "silobench/thresholds.hpp"

namespace py = pybind11;
using namespace silobench;

namespace {

ScoredPredictions make_preds(const Eigen::VectorXd& scores,
                             const std::vector<int>& labels,
                             const std::vector<std::string>& genders,
                             const std::vector<int>& urm) {
  ScoredPredictions p;
  p.scores = scores;
  p.labels = labels;
  if (genders.size() != labels.size() || urm.size() != labels.size()) {
    throw ValidationError("genders/urm must parallel labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    p.groups.push_back({gender_from_string(genders[i]), urm[i] != 0});
  }
  return p;
}

}  // namespace

PYBIND11_MODULE(_silobench, m) {
  m.doc() = "Cross-institutional retention transfer-learning benchmark engine";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<UndefinedMetricError>(m, "UndefinedMetricError");

  m.def(
      "auc",
      [](const Eigen::VectorXd& scores, const std::vector<int>& labels) {
        return auc(scores, labels);
      },
      py::arg("scores"), py::arg("labels"),
      "Mann-Whitney AUC with ties counted 1/2");

  m.def("delta_auc", &delta_auc, py::arg("auc_t"), py::arg("auc_t_prime"));

  m.def(
      "mcc",
      [](std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
        return mcc({tp, fp, tn, fn});
      },
      py::arg("tp"), py::arg("fp"), py::arg("tn"), py::arg("fn"));

  m.def(
      "specificity",
      [](std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
        return specificity({tp, fp, tn, fn});
      },
      py::arg("tp"), py::arg("fp"), py::arg("tn"), py::arg("fn"));

  m.def(
      "auc_gap",
      [](const Eigen::VectorXd& scores, const std::vector<int>& labels,
         const std::vector<std::string>& genders, const std::vector<int>& urm,
         std::size_t floor) {
        const ScoredPredictions p = make_preds(scores, labels, genders, urm);
        std::map<GroupKey, std::size_t> sizes;
        for (const auto& g : p.groups) ++sizes[g];
        std::set<GroupKey> eligible;
        for (const auto& [g, n] : sizes) {
          if (n >= floor) eligible.insert(g);
        }
        const AucGapResult r = auc_gap(p, eligible);
        return py::make_tuple(r.gap, r.worst_low.label(), r.worst_high.label());
      },
      py::arg("scores"), py::arg("labels"), py::arg("genders"), py::arg("urm"),
      py::arg("floor") = 20);

  m.def(
      "equalized_odds",
      [](const Eigen::VectorXd& scores, const std::vector<int>& labels,
         const std::vector<std::string>& genders, const std::vector<int>& urm,
         double threshold, const std::string& attribute) {
        const ScoredPredictions p = make_preds(scores, labels, genders, urm);
        const EoAttribute attr =
            attribute == "urm" ? EoAttribute::urm : EoAttribute::gender;
        return equalized_odds(p, threshold, attr);
      },
      py::arg("scores"), py::arg("labels"), py::arg("genders"), py::arg("urm"),
      py::arg("threshold") = 0.5, py::arg("attribute") = "gender");

  m.def("wasserstein_1d", &wasserstein_1d, py::arg("p"), py::arg("q"),
        "Exact 1-D Wasserstein distance between empirical samples");

  m.def(
      "wtndd_pass",
      [](double distance, double range) {
        return wtndd(distance, range) == Wtndd::pass;
      },
      py::arg("distance"), py::arg("range"),
      "True when the distributions show no notable difference");

  m.def("combined_range", &combined_range, py::arg("p"), py::arg("q"));

  m.def("base_rate_threshold", &base_rate_threshold, py::arg("scores"),
        py::arg("rate"),
        "Empirical (1-rate)-quantile with lower interpolation");

  m.def("regularized_incomplete_beta", &regularized_incomplete_beta,
        py::arg("a"), py::arg("b"), py::arg("x"));
  m.def("student_t_two_sided_p", &student_t_two_sided_p, py::arg("t"),
        py::arg("dof"));

  m.def(
      "ols_fit",
      [](const Eigen::VectorXd& y, const Eigen::MatrixXd& design) {
        const RegressionFit fit = ols_fit(y, design);
        py::dict out;
        out["beta"] = fit.beta;
        out["se"] = fit.std_errors;
        out["t"] = fit.t_values;
        out["p"] = fit.p_values;
        out["r_squared"] = fit.r_squared;
        out["n"] = fit.n;
        return out;
      },
      py::arg("y"), py::arg("design"),
      "Least squares with standard errors and two-sided t p-values");

  m.def(
      "generate_universe",
      [](const std::string& config_json, std::uint64_t seed,
         const std::string& out_dir) {
        GeneratorConfig config;
        if (!config_json.empty()) {
          config = GeneratorConfig::from_json(config_json);
        }
        const auto universe = generate_universe(config, seed);
        write_universe(universe, default_synthetic_schema(), out_dir);
        return universe.size();
      },
      py::arg("config_json") = "", py::arg("seed") = 1, py::arg("out_dir"),
      "Generate a synthetic universe and write it as CSV + manifest");

  m.def(
      "run_experiment",
      [](const std::string& config_json, const std::string& family,
         const std::string& out_dir, const std::string& format) {
        ExperimentConfig config;
        if (!config_json.empty()) {
          config = ExperimentConfig::from_json(config_json);
        }
        ExperimentRunner runner(config, out_dir);
        runner.run_family(family);
        return runner.emit(format);
      },
      py::arg("config_json") = "", py::arg("family") = "all",
      py::arg("out_dir"), py::arg("format") = "csv",
      "Run an experiment family and emit its reports; returns report paths");

  m.attr("__version__") = "0.1.0";
}
