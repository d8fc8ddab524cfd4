// silobench CLI: generate synthetic universes, train/transfer/adapt/evaluate
// retention models across simulated institutional silos, and run the
// benchmark experiment families.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "silobench/adaptation.hpp"
#include "silobench/errors.hpp"
#include "silobench/evaluation.hpp"
#include "silobench/generator.hpp"
#include "silobench/orchestrator.hpp"
#include "silobench/similarity.hpp"
#include "silobench/training.hpp"

namespace fs = std::filesystem;
using namespace silobench;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << content;
}

std::vector<std::uint8_t> read_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_blob(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

const InstitutionSilo& find_silo(const std::vector<InstitutionSilo>& universe,
                                 const std::string& id) {
  for (const auto& s : universe) {
    if (s.id() == id) return s;
  }
  throw ConfigError("unknown silo '" + id + "'");
}

ModelParams load_model_or_artifact(const std::string& path) {
  const auto bytes = read_blob(path);
  if (bytes.size() >= 4 && bytes[0] == 'S' && bytes[1] == 'B' &&
      bytes[2] == 'T' && bytes[3] == 'A') {
    return TransferArtifact::deserialize(bytes).params();
  }
  return deserialize_params(bytes);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-institutional retention transfer-learning benchmark"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", universe_path, silo_id, model_path;
  std::uint64_t seed = 1;

  // generate
  auto* gen = app.add_subcommand("generate", "Generate a synthetic universe");
  gen->add_option("--config", config_path, "Generator config JSON");
  gen->add_option("--seed", seed, "Universe seed");
  gen->add_option("--out-dir", out_dir, "Output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "Train a silo-local model");
  std::string train_config_path;
  train->add_option("--universe", universe_path, "universe.json manifest")->required();
  train->add_option("--silo", silo_id, "Training silo id")->required();
  train->add_option("--config", train_config_path, "Experiment/train config JSON");
  train->add_option("--seed", seed, "Training seed");
  train->add_option("--out-dir", out_dir, "Output directory");

  // transfer
  auto* transfer = app.add_subcommand(
      "transfer", "Package a trained model as a transfer artifact");
  std::string transfer_out = "artifact.bin";
  bool with_fisher = false;
  transfer->add_option("--model", model_path, "Model binary")->required();
  transfer->add_option("--universe", universe_path, "universe.json manifest");
  transfer->add_option("--silo", silo_id, "Silo the model was trained on")->required();
  transfer->add_flag("--with-fisher", with_fisher,
                     "Compute and embed the Fisher diagonal (needs --universe)");
  transfer->add_option("--config", config_path, "Experiment config JSON");
  transfer->add_option("--out", transfer_out, "Artifact output path");

  // adapt
  auto* adapt_cmd = app.add_subcommand(
      "adapt", "Source-free adaptation of a model to a target silo");
  std::string method = "shot", target_id, adapt_out = "adapted_model.bin";
  adapt_cmd->add_option("--model", model_path, "Model or artifact binary")->required();
  adapt_cmd->add_option("--universe", universe_path, "universe.json manifest")->required();
  adapt_cmd->add_option("--target", target_id, "Target silo id")->required();
  adapt_cmd->add_option("--method", method, "shot | tent | pseudo_label");
  adapt_cmd->add_option("--config", config_path, "Experiment config JSON");
  adapt_cmd->add_option("--seed", seed, "Adaptation seed");
  adapt_cmd->add_option("--out-dir", out_dir, "Output directory");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a model on a silo");
  std::string policy = "default";
  eval_cmd->add_option("--model", model_path, "Model or artifact binary")->required();
  eval_cmd->add_option("--universe", universe_path, "universe.json manifest")->required();
  eval_cmd->add_option("--silo", silo_id, "Evaluation silo id")->required();
  eval_cmd->add_option("--policy", policy, "default | overall_optimal | group_optimal");
  eval_cmd->add_option("--config", config_path, "Experiment config JSON");
  eval_cmd->add_option("--out-dir", out_dir, "Output directory (report JSON)");

  // similarity
  auto* sim_cmd =
      app.add_subcommand("similarity", "Pairwise contextual similarity matrix");
  sim_cmd->add_option("--universe", universe_path, "universe.json manifest")->required();
  sim_cmd->add_option("--out-dir", out_dir, "Output directory");

  // experiment run <family>
  auto* exp = app.add_subcommand("experiment", "Run experiment families");
  auto* run = exp->add_subcommand("run", "Run one family");
  std::string family = "all";
  run->add_option("family", family,
                  "direct | similarity | msti | sequential | sfda | thresholds | all")
      ->required();
  run->add_option("--config", config_path, "Experiment config JSON");
  run->add_option("--seed", seed, "Universe seed override");
  run->add_option("--out-dir", out_dir, "Output directory");
  std::string report_format = "csv";
  run->add_option("--format", report_format, "Report format: csv | json");

  // report
  auto* rep = app.add_subcommand("report", "Re-emit reports from stored results");
  std::string results_path, experiment_id = "default";
  rep->add_option("--results", results_path, "results.jsonl")->required();
  rep->add_option("--experiment", experiment_id, "Experiment id");
  rep->add_option("--format", report_format, "csv | json");
  rep->add_option("--out-dir", out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // bad flags are config errors
  }

  try {
    if (gen->parsed()) {
      GeneratorConfig config;
      if (!config_path.empty()) {
        config = GeneratorConfig::from_json(read_file(config_path));
      }
      if (gen->count("--seed") == 0) seed = 1;
      const auto universe = generate_universe(config, seed);
      write_universe(universe, default_synthetic_schema(), out_dir);
      std::cout << "wrote universe of " << universe.size() << " silos to "
                << out_dir << "\n";
    } else if (train->parsed()) {
      ExperimentConfig config;
      if (!train_config_path.empty()) {
        config = ExperimentConfig::from_json(read_file(train_config_path));
      }
      if (train->count("--seed")) config.train.seed = seed;
      const auto universe = load_universe(universe_path);
      const auto& silo = find_silo(universe, silo_id);
      const TrainResult result = train_local(silo, config.split, config.train);
      fs::create_directories(out_dir);
      const std::string model_out =
          (fs::path(out_dir) / (silo_id + "_model.bin")).string();
      write_blob(model_out, serialize_params(result.params));
      write_file((fs::path(out_dir) / (silo_id + "_train_log.jsonl")).string(),
                 train_log_jsonl(result.log));
      std::cout << "trained on " << silo_id << "; model at " << model_out << "\n";
    } else if (transfer->parsed()) {
      ExperimentConfig config;
      if (!config_path.empty()) {
        config = ExperimentConfig::from_json(read_file(config_path));
      }
      const ModelParams params = load_model_or_artifact(model_path);
      std::optional<FisherDiagonal> fisher;
      if (with_fisher) {
        if (universe_path.empty()) {
          throw ConfigError("--with-fisher requires --universe");
        }
        const auto universe = load_universe(universe_path);
        fisher = compute_fisher_diagonal(params, find_silo(universe, silo_id),
                                         config.split, config.fisher_sample_cap,
                                         config.train.seed);
      }
      const TransferArtifact artifact =
          make_artifact(params, std::move(fisher), {silo_id},
                        config_digest_of(config.to_json()));
      write_blob(transfer_out, artifact.serialize());
      std::cout << "wrote transfer artifact to " << transfer_out << "\n";
    } else if (adapt_cmd->parsed()) {
      ExperimentConfig config;
      if (!config_path.empty()) {
        config = ExperimentConfig::from_json(read_file(config_path));
      }
      AdaptConfig ac = config.adapt;
      ac.method = adapt_method_from_string(method);
      if (adapt_cmd->count("--seed")) ac.seed = seed;
      const auto universe = load_universe(universe_path);
      const auto& target = find_silo(universe, target_id);
      const ModelParams params = load_model_or_artifact(model_path);
      const AdaptResult result =
          adapt(params, target.test_features(config.split), ac);
      fs::create_directories(out_dir);
      const std::string out_path =
          (fs::path(out_dir) / (target_id + "_" + method + "_model.bin")).string();
      write_blob(out_path, serialize_params(result.params));
      write_file(
          (fs::path(out_dir) / (target_id + "_" + method + "_log.jsonl")).string(),
          adapt_log_jsonl(result.log));
      if (result.no_confident_examples) {
        std::cout << "warning: no examples above the confidence threshold; "
                     "model returned unchanged\n";
      }
      std::cout << "adapted model at " << out_path << "\n";
    } else if (eval_cmd->parsed()) {
      ExperimentConfig config;
      if (!config_path.empty()) {
        config = ExperimentConfig::from_json(read_file(config_path));
      }
      const auto universe = load_universe(universe_path);
      const auto& silo = find_silo(universe, silo_id);
      const ModelParams params = load_model_or_artifact(model_path);
      const EvalConfig eval{threshold_kind_from_string(policy),
                            config.group_floor};
      const MetricReport report =
          evaluate_on_silo(params, silo, config.split, eval);
      fs::create_directories(out_dir);
      const std::string out_path =
          (fs::path(out_dir) / (silo_id + "_report.json")).string();
      write_file(out_path, report.to_json() + "\n");
      std::cout << report.to_json() << "\n";
    } else if (sim_cmd->parsed()) {
      const auto universe = load_universe(universe_path);
      std::map<std::string, ContextualProfile> profiles;
      for (const auto& s : universe) profiles.emplace(s.id(), s.context());
      const SimilarityMatrix sims = SimilarityMatrix::build(profiles);
      fs::create_directories(out_dir);
      const std::string out_path = (fs::path(out_dir) / "similarity.csv").string();
      write_file(out_path, sims.to_csv());
      std::cout << "wrote " << out_path << "\n";
    } else if (exp->parsed()) {
      ExperimentConfig config;
      if (!config_path.empty()) {
        config = ExperimentConfig::from_json(read_file(config_path));
      }
      if (run->count("--seed")) config.universe_seed = seed;
      ExperimentRunner runner(config, out_dir);
      runner.run_family(family);
      const auto paths = runner.emit(report_format);
      std::cout << "results: " << out_dir << "/results.jsonl\n";
      for (const auto& p : paths) std::cout << "report: " << p << "\n";
    } else if (rep->parsed()) {
      const ResultsStore store = ResultsStore::load_jsonl(results_path);
      const auto paths =
          emit_report(store, experiment_id, report_format, out_dir);
      for (const auto& p : paths) std::cout << "report: " << p << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
