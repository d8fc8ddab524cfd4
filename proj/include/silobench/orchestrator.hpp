#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "silobench/adaptation.hpp"
#include "silobench/data_model.hpp"
#include "silobench/evaluation.hpp"
#include "silobench/generator.hpp"
#include "silobench/metrics.hpp"
#include "silobench/network.hpp"
#include "silobench/similarity.hpp"
#include "silobench/training.hpp"

namespace silobench {

// The only object allowed to cross silo boundaries: parameters, optional
// Fisher diagonal, provenance. Never record-level data; the serialized form
// is a tagged format whose field set is audited by tests.
struct TransferArtifact {
  std::vector<std::uint8_t> params_blob;
  std::optional<FisherDiagonal> fisher;
  std::vector<std::string> provenance;  // ordered training silo ids
  std::string config_digest;

  ModelParams params() const;  // deserializes the blob

  std::vector<std::uint8_t> serialize() const;
  static TransferArtifact deserialize(const std::vector<std::uint8_t>& bytes);
};

TransferArtifact make_artifact(const ModelParams& params,
                               std::optional<FisherDiagonal> fisher,
                               std::vector<std::string> provenance,
                               std::string config_digest);

// FNV-1a digest of a canonical JSON dump; ties artifacts to the config that
// produced them.
std::string config_digest_of(const std::string& canonical_json);

struct ResultRow {
  std::string experiment_id;
  std::string scheme;   // local | direct | msti | sequential | shot | ...
  std::string source;   // training provenance head
  std::string target;
  std::uint64_t seed = 0;
  std::string partner;  // sequential stage-2 silo, empty otherwise
  MetricReport report;
  std::string error;    // nonfatal per-cell failure, empty on success

  std::string key() const;
  std::string to_json() const;
  static ResultRow from_json(const std::string& text);
};

// Append-only, unique (experiment, scheme, source, target, seed); rows are
// immutable once written. Optionally mirrors every append to a JSONL sink so
// partial results survive a crashed run.
class ResultsStore {
 public:
  void append(ResultRow row);  // duplicate key -> Error
  const std::vector<ResultRow>& rows() const { return rows_; }

  void attach_sink(const std::string& path);  // truncates, then mirrors
  void save_jsonl(const std::string& path) const;
  static ResultsStore load_jsonl(const std::string& path);

 private:
  std::vector<ResultRow> rows_;
  std::map<std::string, std::size_t> index_;
  std::string sink_path_;
};

struct ExperimentConfig {
  std::string experiment_id = "default";

  // Universe source: generated, or a manifest written by `generate`.
  GeneratorConfig generator;
  std::uint64_t universe_seed = 1;
  std::optional<std::string> universe_manifest;

  CohortSplit split;
  TrainConfig train;
  AdaptConfig adapt;
  std::size_t sfda_seeds = 5;  // per (pair, method); box plots need spread

  // Similarity: cost is excluded from the overall score by default.
  std::vector<ContextCategory> included_categories = {
      ContextCategory::school, ContextCategory::academic,
      ContextCategory::demographic, ContextCategory::completion,
      ContextCategory::financial_aid};
  double partner_floor = 0.6;
  PartnerReference partner_reference = PartnerReference::msti;

  std::vector<double> strata = {0.0, 0.05, 0.10};  // MSTI AUC-Gap conditioning
  std::size_t group_floor = 20;
  std::size_t fisher_sample_cap = 2000;
  // Stage-2 training: SGD keeps the quadratic EWC anchor binding (adaptive
  // moment rescaling would flatten it).
  double sequential_lambda = 1.0;
  OptKind sequential_optimizer = OptKind::sgd;
  double sequential_learning_rate = 0.01;

  void validate() const;
  static ExperimentConfig from_json(const std::string& json_text);
  std::string to_json() const;
};

// Universe manifest I/O (written by `generate`, consumed by experiments).
struct UniverseManifest {
  Schema schema;
  std::string context_csv;
  std::vector<std::pair<std::string, SiloKind>> silos;  // id -> kind
  std::map<std::string, std::string> student_csvs;      // id -> path
};
void write_universe(const std::vector<InstitutionSilo>& universe,
                    const Schema& schema, const std::string& out_dir);
std::vector<InstitutionSilo> load_universe(const std::string& manifest_path);

// One value of a figure-analog distribution dump.
struct DistributionEntry {
  std::string family;   // msti | sequential | sfda | thresholds | direct
  std::string metric;   // test_auc | auc_gap | specificity | mcc | eo_* ...
  std::string scheme;
  std::string stratum;  // e.g. "0.05", empty when unconditioned
  std::string source;
  std::string target;
  std::uint64_t seed = 0;
  double value = 0.0;
};

struct WtnddComparison {
  std::string family;
  std::string metric;
  std::string scheme_a;
  std::string scheme_b;
  std::string stratum;
  std::size_t n_a = 0, n_b = 0;
  double distance = 0.0;
  double range = 0.0;
  Wtndd verdict = Wtndd::pass;
};

struct BoxStats {
  double q1 = 0, median = 0, q3 = 0;
  double whisker_lo = 0, whisker_hi = 0;  // data extremes within 1.5 IQR
  double min = 0, max = 0;
  std::size_t n = 0;
};
BoxStats box_stats(std::vector<double> values);

// Pure functions of the store: reports are recomputed on every emit, so a
// re-emit without new rows is byte-identical.
std::vector<DistributionEntry> collect_distributions(
    const ResultsStore& store, const std::string& experiment_id,
    const std::vector<double>& strata);
std::vector<WtnddComparison> wtndd_table(
    const ResultsStore& store, const std::string& experiment_id,
    const std::vector<double>& strata);

// Writes <id>_rows, <id>_distributions, <id>_wtndd, <id>_boxplots under
// out_dir in the requested format ("json" or "csv"); returns the paths.
std::vector<std::string> emit_report(const ResultsStore& store,
                                     const std::string& experiment_id,
                                     const std::string& format,
                                     const std::string& out_dir,
                                     const std::vector<double>& strata = {
                                         0.0, 0.05, 0.10});

// Runs the experiment families over one universe. Cells are independent and
// silos immutable; execution order is fixed so reruns are byte-identical.
class ExperimentRunner {
 public:
  explicit ExperimentRunner(ExperimentConfig config, std::string out_dir = "");

  const std::vector<InstitutionSilo>& universe();
  const SimilarityMatrix& similarity();
  ResultsStore& store() { return store_; }
  const ExperimentConfig& config() const { return config_; }

  void run_direct_matrix();
  // (AUC-drop fit, AUC-Gap fit) over all source != target pairs.
  std::pair<RegressionFit, RegressionFit> run_similarity_regression();
  void run_msti_experiment();
  void run_sequential_experiment();
  void run_sfda_experiment();
  void run_threshold_experiment();
  void run_family(const std::string& family);  // includes "all"

  const WeightVector& weights();  // CS weights from the AUC-drop regression
  const std::map<std::string, std::string>& msti_choice() const {
    return msti_by_target_;
  }
  // Mean direct-transfer AUC over candidate sources (random-selection
  // expectation) for one target.
  double expected_auc(const std::string& target) const;

  std::vector<std::string> emit(const std::string& format);

 private:
  const InstitutionSilo& silo_by_id(const std::string& id) const;
  const ModelParams& source_model(const std::string& source_id);
  std::vector<const InstitutionSilo*> community_targets() const;
  std::vector<std::string> source_ids() const;
  void ensure_direct();
  void ensure_msti();

  ExperimentConfig config_;
  std::string out_dir_;
  std::vector<InstitutionSilo> universe_;
  bool universe_ready_ = false;
  std::optional<SimilarityMatrix> sims_;
  std::optional<WeightVector> weights_;
  std::optional<std::pair<RegressionFit, RegressionFit>> regressions_;
  std::map<std::string, ModelParams> source_models_;
  std::map<std::string, std::string> msti_by_target_;
  ResultsStore store_;
  bool direct_done_ = false;
  bool msti_done_ = false;
};

}  // namespace silobench
