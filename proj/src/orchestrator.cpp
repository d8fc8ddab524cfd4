#include "silobench/orchestrator.hpp"

#include <nlohmann/json.hpp>
#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "silobench/errors.hpp"

namespace silobench {

namespace {

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void push_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void push_f64(std::vector<std::uint8_t>& out, double d) {
  push_u64(out, std::bit_cast<std::uint64_t>(d));
}

struct Reader {
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw FormatError("truncated artifact blob");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string tag() {
    need(4);
    std::string t(reinterpret_cast<const char*>(buf.data() + pos), 4);
    pos += 4;
    return t;
  }
  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                  buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return out;
  }
};

}  // namespace

// -- TransferArtifact -----------------------------------------------------------

ModelParams TransferArtifact::params() const {
  return deserialize_params(params_blob);
}

std::vector<std::uint8_t> TransferArtifact::serialize() const {
  if (provenance.empty()) throw ArtifactError("artifact provenance is empty");
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'S', 'B', 'T', 'A'});
  push_u32(out, 1);

  out.insert(out.end(), {'P', 'R', 'M', 'S'});
  push_u64(out, params_blob.size());
  out.insert(out.end(), params_blob.begin(), params_blob.end());

  if (fisher) {
    std::vector<std::uint8_t> body;
    std::size_t count = 0;
    for_each_tensor(*fisher, [&body, &count](const Eigen::Ref<const Eigen::MatrixXd>& t) {
      for (Eigen::Index r = 0; r < t.rows(); ++r) {
        for (Eigen::Index c = 0; c < t.cols(); ++c) push_f64(body, t(r, c));
      }
      count += static_cast<std::size_t>(t.size());
    });
    out.insert(out.end(), {'F', 'S', 'H', 'R'});
    push_u64(out, body.size() + 8);
    push_u64(out, count);
    out.insert(out.end(), body.begin(), body.end());
  }

  std::vector<std::uint8_t> prov;
  push_u64(prov, provenance.size());
  for (const auto& p : provenance) {
    push_u64(prov, p.size());
    prov.insert(prov.end(), p.begin(), p.end());
  }
  out.insert(out.end(), {'P', 'R', 'O', 'V'});
  push_u64(out, prov.size());
  out.insert(out.end(), prov.begin(), prov.end());

  out.insert(out.end(), {'C', 'D', 'I', 'G'});
  push_u64(out, config_digest.size());
  out.insert(out.end(), config_digest.begin(), config_digest.end());
  return out;
}

TransferArtifact TransferArtifact::deserialize(
    const std::vector<std::uint8_t>& bytes) {
  Reader rd{bytes};
  if (rd.tag() != "SBTA") throw FormatError("bad artifact magic");
  if (rd.u32() != 1) throw FormatError("unsupported artifact version");

  TransferArtifact art;
  bool have_params = false;
  std::vector<double> fisher_raw;
  bool have_fisher = false;
  while (rd.pos < bytes.size()) {
    const std::string tag = rd.tag();
    const std::uint64_t len = rd.u64();
    if (tag == "PRMS") {
      art.params_blob = rd.bytes(len);
      have_params = true;
    } else if (tag == "FSHR") {
      const std::size_t end = rd.pos + len;
      const std::uint64_t count = rd.u64();
      if (len != 8 + count * 8) throw FormatError("bad Fisher section length");
      fisher_raw.resize(count);
      for (auto& v : fisher_raw) v = rd.f64();
      if (rd.pos != end) throw FormatError("Fisher section length mismatch");
      have_fisher = true;
    } else if (tag == "PROV") {
      const std::size_t end = rd.pos + len;
      const std::uint64_t n = rd.u64();
      for (std::uint64_t i = 0; i < n; ++i) {
        const std::uint64_t slen = rd.u64();
        const auto b = rd.bytes(slen);
        art.provenance.emplace_back(b.begin(), b.end());
      }
      if (rd.pos != end) throw FormatError("provenance section length mismatch");
    } else if (tag == "CDIG") {
      const auto b = rd.bytes(len);
      art.config_digest.assign(b.begin(), b.end());
    } else {
      throw FormatError("unknown artifact section '" + tag + "'");
    }
  }
  if (!have_params) throw FormatError("artifact has no parameter section");
  if (art.provenance.empty()) throw FormatError("artifact has no provenance");

  if (have_fisher) {
    const ModelParams p = deserialize_params(art.params_blob);
    FisherDiagonal f = Gradients::zeros_like(p);
    std::size_t at = 0;
    for_each_tensor(f, [&fisher_raw, &at](Eigen::Ref<Eigen::MatrixXd> t) {
      for (Eigen::Index r = 0; r < t.rows(); ++r) {
        for (Eigen::Index c = 0; c < t.cols(); ++c) {
          if (at >= fisher_raw.size()) throw FormatError("Fisher too short");
          t(r, c) = fisher_raw[at++];
        }
      }
    });
    if (at != fisher_raw.size()) throw FormatError("Fisher shape mismatch");
    art.fisher = std::move(f);
  }
  return art;
}

TransferArtifact make_artifact(const ModelParams& params,
                               std::optional<FisherDiagonal> fisher,
                               std::vector<std::string> provenance,
                               std::string config_digest) {
  if (provenance.empty()) throw ArtifactError("artifact provenance is empty");
  if (fisher) {
    bool negative = false;
    for_each_tensor(*fisher, [&negative](const Eigen::Ref<const Eigen::MatrixXd>& t) {
      if ((t.array() < 0.0).any()) negative = true;
    });
    if (negative) throw ArtifactError("Fisher diagonal has negative entries");
  }
  TransferArtifact art;
  art.params_blob = serialize_params(params);
  art.fisher = std::move(fisher);
  art.provenance = std::move(provenance);
  art.config_digest = std::move(config_digest);
  return art;
}

std::string config_digest_of(const std::string& canonical_json) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : canonical_json) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex << h;
  return out.str();
}

// -- ResultsStore -----------------------------------------------------------------

std::string ResultRow::key() const {
  return experiment_id + "|" + scheme + "|" + source + "|" + target + "|" +
         std::to_string(seed);
}

std::string ResultRow::to_json() const {
  nlohmann::json j;
  j["experiment_id"] = experiment_id;
  j["scheme"] = scheme;
  j["source"] = source;
  j["target"] = target;
  j["seed"] = seed;
  j["partner"] = partner;
  j["report"] = nlohmann::json::parse(report.to_json());
  j["error"] = error;
  return j.dump();
}

ResultRow ResultRow::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("result row JSON: ") + e.what());
  }
  ResultRow r;
  r.experiment_id = j.at("experiment_id").get<std::string>();
  r.scheme = j.at("scheme").get<std::string>();
  r.source = j.at("source").get<std::string>();
  r.target = j.at("target").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.partner = j.value("partner", "");
  r.report = MetricReport::from_json(j.at("report").dump());
  r.error = j.value("error", "");
  return r;
}

void ResultsStore::append(ResultRow row) {
  const std::string k = row.key();
  if (index_.count(k)) {
    throw Error("duplicate result row key: " + k);
  }
  index_[k] = rows_.size();
  if (!sink_path_.empty()) {
    std::ofstream out(sink_path_, std::ios::app);
    if (!out) throw Error("cannot append to results sink " + sink_path_);
    out << row.to_json() << "\n";
  }
  rows_.push_back(std::move(row));
}

void ResultsStore::attach_sink(const std::string& path) {
  sink_path_ = path;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open results sink " + path);
  for (const auto& r : rows_) out << r.to_json() << "\n";
}

void ResultsStore::save_jsonl(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  for (const auto& r : rows_) out << r.to_json() << "\n";
}

ResultsStore ResultsStore::load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  ResultsStore store;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    store.append(ResultRow::from_json(line));
  }
  return store;
}

// -- ExperimentConfig ---------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (experiment_id.empty()) throw ConfigError("experiment_id is empty");
  generator.validate();
  split.validate();
  train.validate();
  adapt.validate();
  if (included_categories.empty()) {
    throw ConfigError("no similarity categories included");
  }
  if (!(partner_floor >= 0.0 && partner_floor <= 1.0)) {
    throw ConfigError("partner floor must lie in [0,1]");
  }
  if (sequential_lambda < 0.0) throw ConfigError("sequential lambda must be >= 0");
  if (sfda_seeds == 0) throw ConfigError("sfda_seeds must be positive");
}

ExperimentConfig ExperimentConfig::from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("experiment config JSON: ") + e.what());
  }
  ExperimentConfig c;
  c.experiment_id = j.value("experiment_id", c.experiment_id);
  if (j.contains("universe")) {
    const auto& u = j["universe"];
    if (u.contains("generated")) {
      c.generator = GeneratorConfig::from_json(u["generated"].dump());
    }
    c.universe_seed = u.value("seed", c.universe_seed);
    if (u.contains("manifest")) {
      c.universe_manifest = u["manifest"].get<std::string>();
    }
  }
  if (j.contains("split")) {
    const auto& s = j["split"];
    if (s.contains("train_years")) {
      c.split.train_years.clear();
      for (const auto& y : s["train_years"]) c.split.train_years.insert(y.get<int>());
    }
    c.split.test_year = s.value("test_year", c.split.test_year);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    if (t.contains("optimizer")) {
      const auto o = t["optimizer"].get<std::string>();
      if (o == "sgd") c.train.optimizer = OptKind::sgd;
      else if (o == "adam") c.train.optimizer = OptKind::adam;
      else throw ConfigError("unknown optimizer '" + o + "'");
    }
    c.train.seed = t.value("seed", c.train.seed);
    c.train.class_weighting = t.value("class_weighting", c.train.class_weighting);
    if (t.contains("arch")) {
      const auto& a = t["arch"];
      if (a.contains("extractor_widths")) {
        c.train.arch.extractor_widths =
            a["extractor_widths"].get<std::vector<std::size_t>>();
      }
      c.train.arch.bottleneck_width =
          a.value("bottleneck_width", c.train.arch.bottleneck_width);
      c.train.arch.bn_momentum = a.value("bn_momentum", c.train.arch.bn_momentum);
      c.train.arch.bn_epsilon = a.value("bn_epsilon", c.train.arch.bn_epsilon);
    }
  }
  if (j.contains("adapt")) {
    const auto& a = j["adapt"];
    if (a.contains("method")) {
      c.adapt.method = adapt_method_from_string(a["method"].get<std::string>());
    }
    c.adapt.epochs = a.value("epochs", c.adapt.epochs);
    c.adapt.batch_size = a.value("batch_size", c.adapt.batch_size);
    c.adapt.learning_rate = a.value("learning_rate", c.adapt.learning_rate);
    c.adapt.shot_pl_weight = a.value("shot_pl_weight", c.adapt.shot_pl_weight);
    c.adapt.pl_confidence_threshold =
        a.value("pl_confidence_threshold", c.adapt.pl_confidence_threshold);
    c.adapt.seed = a.value("seed", c.adapt.seed);
  }
  c.sfda_seeds = j.value("sfda_seeds", c.sfda_seeds);
  if (j.contains("included_categories")) {
    c.included_categories.clear();
    for (const auto& name : j["included_categories"]) {
      c.included_categories.push_back(
          context_category_from_string(name.get<std::string>()));
    }
  }
  c.partner_floor = j.value("partner_floor", c.partner_floor);
  if (j.contains("partner_reference")) {
    const auto r = j["partner_reference"].get<std::string>();
    if (r == "msti") c.partner_reference = PartnerReference::msti;
    else if (r == "target") c.partner_reference = PartnerReference::target;
    else throw ConfigError("unknown partner reference '" + r + "'");
  }
  if (j.contains("strata")) c.strata = j["strata"].get<std::vector<double>>();
  c.group_floor = j.value("group_floor", c.group_floor);
  c.fisher_sample_cap = j.value("fisher_sample_cap", c.fisher_sample_cap);
  c.sequential_lambda = j.value("sequential_lambda", c.sequential_lambda);
  if (j.contains("sequential_optimizer")) {
    const auto o = j["sequential_optimizer"].get<std::string>();
    if (o == "sgd") c.sequential_optimizer = OptKind::sgd;
    else if (o == "adam") c.sequential_optimizer = OptKind::adam;
    else throw ConfigError("unknown optimizer '" + o + "'");
  }
  c.sequential_learning_rate =
      j.value("sequential_learning_rate", c.sequential_learning_rate);
  c.validate();
  return c;
}

std::string ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["experiment_id"] = experiment_id;
  j["universe"]["generated"] = nlohmann::json::parse(generator.to_json());
  j["universe"]["seed"] = universe_seed;
  if (universe_manifest) j["universe"]["manifest"] = *universe_manifest;
  j["split"]["train_years"] = split.train_years;
  j["split"]["test_year"] = split.test_year;
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"optimizer", train.optimizer == OptKind::sgd ? "sgd" : "adam"},
                {"seed", train.seed},
                {"class_weighting", train.class_weighting},
                {"arch",
                 {{"extractor_widths", train.arch.extractor_widths},
                  {"bottleneck_width", train.arch.bottleneck_width},
                  {"bn_momentum", train.arch.bn_momentum},
                  {"bn_epsilon", train.arch.bn_epsilon}}}};
  j["adapt"] = {{"method", to_string(adapt.method)},
                {"epochs", adapt.epochs},
                {"batch_size", adapt.batch_size},
                {"learning_rate", adapt.learning_rate},
                {"shot_pl_weight", adapt.shot_pl_weight},
                {"pl_confidence_threshold", adapt.pl_confidence_threshold},
                {"seed", adapt.seed}};
  j["sfda_seeds"] = sfda_seeds;
  j["included_categories"] = nlohmann::json::array();
  for (ContextCategory c : included_categories) {
    j["included_categories"].push_back(to_string(c));
  }
  j["partner_floor"] = partner_floor;
  j["partner_reference"] =
      partner_reference == PartnerReference::msti ? "msti" : "target";
  j["strata"] = strata;
  j["group_floor"] = group_floor;
  j["fisher_sample_cap"] = fisher_sample_cap;
  j["sequential_lambda"] = sequential_lambda;
  j["sequential_optimizer"] =
      sequential_optimizer == OptKind::sgd ? "sgd" : "adam";
  j["sequential_learning_rate"] = sequential_learning_rate;
  return j.dump(2);
}

// -- universe I/O ----------------------------------------------------------------

void write_universe(const std::vector<InstitutionSilo>& universe,
                    const Schema& schema, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<const InstitutionSilo*> ptrs;
  for (const auto& s : universe) ptrs.push_back(&s);
  const std::string context_path = (fs::path(out_dir) / "context.csv").string();
  write_context_csv(context_path, ptrs);

  nlohmann::json manifest;
  manifest["schema"] = nlohmann::json::parse(schema.to_json());
  manifest["context_csv"] = "context.csv";
  manifest["silos"] = nlohmann::json::array();
  for (const auto& s : universe) {
    const std::string fname = "students_" + s.id() + ".csv";
    // Only the silo itself writes its records; this helper stands in for the
    // institution exporting its own private data store.
    write_students_csv((fs::path(out_dir) / fname).string(), schema,
                       s.records({}));
    manifest["silos"].push_back({{"id", s.id()},
                                 {"kind", to_string(s.kind())},
                                 {"students_csv", fname}});
  }
  std::ofstream out(fs::path(out_dir) / "universe.json");
  out << manifest.dump(2) << "\n";
}

std::vector<InstitutionSilo> load_universe(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  if (!in) throw ConfigError("cannot open universe manifest " + manifest_path);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("universe manifest: ") + e.what());
  }
  const fs::path dir = fs::path(manifest_path).parent_path();
  const Schema schema = Schema::from_json(manifest.at("schema").dump());
  auto contexts =
      load_context_csv((dir / manifest.at("context_csv").get<std::string>()).string());

  std::vector<InstitutionSilo> universe;
  for (const auto& js : manifest.at("silos")) {
    const std::string id = js.at("id").get<std::string>();
    const std::string kind_s = js.at("kind").get<std::string>();
    const SiloKind kind = kind_s == "university" ? SiloKind::university
                                                 : SiloKind::community_college;
    auto ctx = contexts.find(id);
    if (ctx == contexts.end()) {
      throw ConfigError("institution " + id + " missing from context CSV");
    }
    auto records = load_students_csv(
        (dir / js.at("students_csv").get<std::string>()).string(), schema);
    universe.emplace_back(id, kind, std::move(records), ctx->second, schema);
  }
  return universe;
}

// -- summaries ---------------------------------------------------------------------

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw ValidationError("box_stats: empty sample");
  std::sort(values.begin(), values.end());
  const auto quantile = [&values](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
  };
  BoxStats b;
  b.n = values.size();
  b.min = values.front();
  b.max = values.back();
  b.q1 = quantile(0.25);
  b.median = quantile(0.5);
  b.q3 = quantile(0.75);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr;
  const double hi_fence = b.q3 + 1.5 * iqr;
  b.whisker_lo = b.max;
  b.whisker_hi = b.min;
  for (double v : values) {
    if (v >= lo_fence) {
      b.whisker_lo = v;  // first (smallest) value inside the fence
      break;
    }
  }
  for (auto it = values.rbegin(); it != values.rend(); ++it) {
    if (*it <= hi_fence) {
      b.whisker_hi = *it;
      break;
    }
  }
  return b;
}

namespace {

struct RowSets {
  std::vector<const ResultRow*> local, direct, msti, sequential, thresholds, sfda;
};

RowSets split_rows(const ResultsStore& store, const std::string& id) {
  RowSets s;
  for (const auto& r : store.rows()) {
    if (r.experiment_id != id || !r.error.empty()) continue;
    if (r.scheme == "local") s.local.push_back(&r);
    else if (r.scheme == "direct") s.direct.push_back(&r);
    else if (r.scheme == "msti") s.msti.push_back(&r);
    else if (r.scheme == "sequential") s.sequential.push_back(&r);
    else if (r.scheme.rfind("threshold/", 0) == 0) s.thresholds.push_back(&r);
    else if (r.scheme == "shot" || r.scheme == "tent" ||
             r.scheme == "pseudo_label") {
      s.sfda.push_back(&r);
    }
  }
  return s;
}

std::string stratum_label(double tau) {
  std::ostringstream out;
  out.precision(2);
  out << std::fixed << tau;
  return out.str();
}

}  // namespace

std::vector<DistributionEntry> collect_distributions(
    const ResultsStore& store, const std::string& experiment_id,
    const std::vector<double>& strata) {
  bool known = store.rows().empty();
  for (const auto& r : store.rows()) {
    if (r.experiment_id == experiment_id) { known = true; break; }
  }
  if (!known) throw Error("unknown experiment '" + experiment_id + "'");

  const RowSets rows = split_rows(store, experiment_id);
  std::vector<DistributionEntry> out;
  auto push = [&out, &experiment_id](const std::string& family,
                                     const std::string& metric,
                                     const std::string& scheme,
                                     const std::string& stratum,
                                     const ResultRow& r,
                                     std::optional<double> value) {
    (void)experiment_id;
    if (!value) return;
    out.push_back({family, metric, scheme, stratum, r.source, r.target, r.seed,
                   *value});
  };

  // Direct matrix: per-pair AUC/gap plus the per-target local reference.
  for (const auto* r : rows.local) {
    push("direct", "test_auc", "local", "", *r, r->report.auc);
    push("direct", "auc_gap", "local", "", *r, r->report.auc_gap);
  }
  for (const auto* r : rows.direct) {
    push("direct", "test_auc", "direct", "", *r, r->report.auc);
    push("direct", "auc_gap", "direct", "", *r, r->report.auc_gap);
  }

  // MSTI family: msti vs local vs expected, one value per target.
  if (!rows.msti.empty()) {
    std::map<std::string, std::vector<double>> expected_auc, expected_gap;
    for (const auto* r : rows.direct) {
      if (r->report.auc) expected_auc[r->target].push_back(*r->report.auc);
      if (r->report.auc_gap) expected_gap[r->target].push_back(*r->report.auc_gap);
    }
    std::map<std::string, const ResultRow*> local_by_target;
    for (const auto* r : rows.local) local_by_target[r->target] = r;

    for (const auto* r : rows.msti) {
      push("msti", "test_auc", "msti", "", *r, r->report.auc);
      push("msti", "auc_gap", "msti", "", *r, r->report.auc_gap);
      auto lit = local_by_target.find(r->target);
      if (lit != local_by_target.end()) {
        push("msti", "test_auc", "local", "", *lit->second, lit->second->report.auc);
        push("msti", "auc_gap", "local", "", *lit->second,
             lit->second->report.auc_gap);
      }
      auto eit = expected_auc.find(r->target);
      if (eit != expected_auc.end() && !eit->second.empty()) {
        const double mean =
            std::accumulate(eit->second.begin(), eit->second.end(), 0.0) /
            static_cast<double>(eit->second.size());
        DistributionEntry e{"msti", "test_auc", "expected", "", "", r->target, 0,
                            mean};
        out.push_back(e);
      }
      auto git = expected_gap.find(r->target);
      if (git != expected_gap.end() && !git->second.empty()) {
        const double mean =
            std::accumulate(git->second.begin(), git->second.end(), 0.0) /
            static_cast<double>(git->second.size());
        out.push_back({"msti", "auc_gap", "expected", "", "", r->target, 0, mean});
      }
    }
  }

  // Sequential family, conditioned on the MSTI AUC Gap.
  if (!rows.sequential.empty()) {
    std::map<std::string, const ResultRow*> msti_by_target;
    for (const auto* r : rows.msti) msti_by_target[r->target] = r;
    for (double tau : strata) {
      const std::string label = stratum_label(tau);
      for (const auto* r : rows.sequential) {
        auto mit = msti_by_target.find(r->target);
        if (mit == msti_by_target.end() || !mit->second->report.auc_gap) continue;
        if (*mit->second->report.auc_gap < tau) continue;
        push("sequential", "test_auc", "sequential", label, *r, r->report.auc);
        push("sequential", "auc_gap", "sequential", label, *r, r->report.auc_gap);
        push("sequential", "test_auc", "msti", label, *mit->second,
             mit->second->report.auc);
        push("sequential", "auc_gap", "msti", label, *mit->second,
             mit->second->report.auc_gap);
      }
    }
  }

  // SFDA family: adapted methods plus the direct baseline per pair.
  if (!rows.sfda.empty()) {
    for (const auto* r : rows.sfda) {
      push("sfda", "test_auc", r->scheme, "", *r, r->report.auc);
    }
    for (const auto* r : rows.direct) {
      push("sfda", "test_auc", "direct", "", *r, r->report.auc);
    }
  }

  // Threshold policies.
  for (const auto* r : rows.thresholds) {
    const std::string policy = r->scheme.substr(std::string("threshold/").size());
    push("thresholds", "specificity", policy, "", *r, r->report.specificity);
    push("thresholds", "mcc", policy, "", *r, r->report.mcc);
    push("thresholds", "eo_gender", policy, "", *r, r->report.eo_gender);
    push("thresholds", "eo_urm", policy, "", *r, r->report.eo_urm);
  }
  return out;
}

namespace {

std::vector<double> values_of(const std::vector<DistributionEntry>& dist,
                              const std::string& family,
                              const std::string& metric,
                              const std::string& scheme,
                              const std::string& stratum) {
  std::vector<double> out;
  for (const auto& e : dist) {
    if (e.family == family && e.metric == metric && e.scheme == scheme &&
        e.stratum == stratum) {
      out.push_back(e.value);
    }
  }
  return out;
}

void compare_into(std::vector<WtnddComparison>& table,
                  const std::vector<DistributionEntry>& dist,
                  const std::string& family, const std::string& metric,
                  const std::string& a, const std::string& b,
                  const std::string& stratum) {
  const auto va = values_of(dist, family, metric, a, stratum);
  const auto vb = values_of(dist, family, metric, b, stratum);
  if (va.empty() || vb.empty()) return;
  WtnddComparison c;
  c.family = family;
  c.metric = metric;
  c.scheme_a = a;
  c.scheme_b = b;
  c.stratum = stratum;
  c.n_a = va.size();
  c.n_b = vb.size();
  c.distance = wasserstein_1d(va, vb);
  c.range = combined_range(va, vb);
  c.verdict = wtndd(c.distance, c.range);
  table.push_back(c);
}

}  // namespace

std::vector<WtnddComparison> wtndd_table(const ResultsStore& store,
                                         const std::string& experiment_id,
                                         const std::vector<double>& strata) {
  const auto dist = collect_distributions(store, experiment_id, strata);
  std::vector<WtnddComparison> table;
  for (const char* metric : {"test_auc", "auc_gap"}) {
    compare_into(table, dist, "msti", metric, "msti", "local", "");
    compare_into(table, dist, "msti", metric, "msti", "expected", "");
    compare_into(table, dist, "msti", metric, "local", "expected", "");
  }
  for (double tau : strata) {
    const std::string label = stratum_label(tau);
    compare_into(table, dist, "sequential", "test_auc", "msti", "sequential", label);
    compare_into(table, dist, "sequential", "auc_gap", "msti", "sequential", label);
  }
  for (const char* method : {"shot", "tent", "pseudo_label"}) {
    compare_into(table, dist, "sfda", "test_auc", "direct", method, "");
  }
  for (const char* metric : {"specificity", "mcc", "eo_gender", "eo_urm"}) {
    compare_into(table, dist, "thresholds", metric, "default", "overall_optimal", "");
    compare_into(table, dist, "thresholds", metric, "default", "group_optimal", "");
    compare_into(table, dist, "thresholds", metric, "overall_optimal",
                 "group_optimal", "");
  }
  return table;
}

// -- report emission -----------------------------------------------------------------

namespace {

std::string csv_escape(const std::string& s) {
  // Our identifiers never contain commas; keep CSV writing trivial.
  return s;
}

}  // namespace

std::vector<std::string> emit_report(const ResultsStore& store,
                                     const std::string& experiment_id,
                                     const std::string& format,
                                     const std::string& out_dir,
                                     const std::vector<double>& strata) {
  if (format != "json" && format != "csv") {
    throw ConfigError("report format must be json or csv");
  }
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  const auto dist = collect_distributions(store, experiment_id, strata);
  const auto wt = wtndd_table(store, experiment_id, strata);

  // SFDA box plots per (target, method) across sources and seeds.
  std::map<std::pair<std::string, std::string>, std::vector<double>> sfda_cells;
  for (const auto& e : dist) {
    if (e.family == "sfda") sfda_cells[{e.target, e.scheme}].push_back(e.value);
  }

  std::vector<std::string> paths;
  auto add_path = [&paths, &out_dir](const std::string& name) {
    const std::string p = (fs::path(out_dir) / name).string();
    paths.push_back(p);
    return p;
  };

  if (format == "json") {
    {
      std::ofstream out(add_path(experiment_id + "_rows.jsonl"));
      for (const auto& r : store.rows()) {
        if (r.experiment_id == experiment_id) out << r.to_json() << "\n";
      }
    }
    {
      nlohmann::json j = nlohmann::json::array();
      for (const auto& e : dist) {
        j.push_back({{"family", e.family},
                     {"metric", e.metric},
                     {"scheme", e.scheme},
                     {"stratum", e.stratum},
                     {"source", e.source},
                     {"target", e.target},
                     {"seed", e.seed},
                     {"value", e.value}});
      }
      std::ofstream out(add_path(experiment_id + "_distributions.json"));
      out << j.dump(2) << "\n";
    }
    {
      nlohmann::json j = nlohmann::json::array();
      for (const auto& c : wt) {
        j.push_back({{"family", c.family},
                     {"metric", c.metric},
                     {"scheme_a", c.scheme_a},
                     {"scheme_b", c.scheme_b},
                     {"stratum", c.stratum},
                     {"n_a", c.n_a},
                     {"n_b", c.n_b},
                     {"wasserstein", c.distance},
                     {"range", c.range},
                     {"verdict", to_string(c.verdict)}});
      }
      std::ofstream out(add_path(experiment_id + "_wtndd.json"));
      out << j.dump(2) << "\n";
    }
    {
      nlohmann::json j = nlohmann::json::array();
      for (const auto& [key, values] : sfda_cells) {
        const BoxStats b = box_stats(values);
        j.push_back({{"target", key.first},
                     {"method", key.second},
                     {"q1", b.q1},
                     {"median", b.median},
                     {"q3", b.q3},
                     {"whisker_lo", b.whisker_lo},
                     {"whisker_hi", b.whisker_hi},
                     {"min", b.min},
                     {"max", b.max},
                     {"n", b.n}});
      }
      std::ofstream out(add_path(experiment_id + "_boxplots.json"));
      out << j.dump(2) << "\n";
    }
    return paths;
  }

  // CSV
  {
    std::ofstream out(add_path(experiment_id + "_rows.csv"));
    out << "scheme,source,target,seed,partner,auc,auc_gap,mcc,specificity,"
           "eo_gender,eo_urm,threshold_kind,error\n";
    out.precision(12);
    auto cell = [&out](const std::optional<double>& v) {
      if (v) out << *v;
      out << ",";
    };
    for (const auto& r : store.rows()) {
      if (r.experiment_id != experiment_id) continue;
      out << csv_escape(r.scheme) << "," << r.source << "," << r.target << ","
          << r.seed << "," << r.partner << ",";
      cell(r.report.auc);
      cell(r.report.auc_gap);
      cell(r.report.mcc);
      cell(r.report.specificity);
      cell(r.report.eo_gender);
      cell(r.report.eo_urm);
      out << r.report.threshold_kind << "," << r.error << "\n";
    }
  }
  {
    std::ofstream out(add_path(experiment_id + "_distributions.csv"));
    out << "family,metric,scheme,stratum,source,target,seed,value\n";
    out.precision(12);
    for (const auto& e : dist) {
      out << e.family << "," << e.metric << "," << e.scheme << "," << e.stratum
          << "," << e.source << "," << e.target << "," << e.seed << ","
          << e.value << "\n";
    }
  }
  {
    std::ofstream out(add_path(experiment_id + "_wtndd.csv"));
    out << "family,metric,scheme_a,scheme_b,stratum,n_a,n_b,wasserstein,range,"
           "verdict\n";
    out.precision(12);
    for (const auto& c : wt) {
      out << c.family << "," << c.metric << "," << c.scheme_a << ","
          << c.scheme_b << "," << c.stratum << "," << c.n_a << "," << c.n_b
          << "," << c.distance << "," << c.range << "," << to_string(c.verdict)
          << "\n";
    }
  }
  {
    std::ofstream out(add_path(experiment_id + "_boxplots.csv"));
    out << "target,method,q1,median,q3,whisker_lo,whisker_hi,min,max,n\n";
    out.precision(12);
    for (const auto& [key, values] : sfda_cells) {
      const BoxStats b = box_stats(values);
      out << key.first << "," << key.second << "," << b.q1 << "," << b.median
          << "," << b.q3 << "," << b.whisker_lo << "," << b.whisker_hi << ","
          << b.min << "," << b.max << "," << b.n << "\n";
    }
  }
  return paths;
}

// -- ExperimentRunner ------------------------------------------------------------------

ExperimentRunner::ExperimentRunner(ExperimentConfig config, std::string out_dir)
    : config_(std::move(config)), out_dir_(std::move(out_dir)) {
  config_.validate();
  if (!out_dir_.empty()) {
    std::filesystem::create_directories(out_dir_);
    store_.attach_sink(
        (std::filesystem::path(out_dir_) / "results.jsonl").string());
  }
}

const std::vector<InstitutionSilo>& ExperimentRunner::universe() {
  if (!universe_ready_) {
    if (config_.universe_manifest) {
      universe_ = load_universe(*config_.universe_manifest);
    } else {
      universe_ = generate_universe(config_.generator, config_.universe_seed);
    }
    universe_ready_ = true;
  }
  return universe_;
}

const SimilarityMatrix& ExperimentRunner::similarity() {
  if (!sims_) {
    std::map<std::string, ContextualProfile> profiles;
    for (const auto& s : universe()) profiles.emplace(s.id(), s.context());
    sims_ = SimilarityMatrix::build(profiles);
  }
  return *sims_;
}

const InstitutionSilo& ExperimentRunner::silo_by_id(const std::string& id) const {
  for (const auto& s : universe_) {
    if (s.id() == id) return s;
  }
  throw Error("unknown silo " + id);
}

std::vector<const InstitutionSilo*> ExperimentRunner::community_targets() const {
  std::vector<const InstitutionSilo*> out;
  for (const auto& s : universe_) {
    if (s.kind() == SiloKind::community_college) out.push_back(&s);
  }
  return out;
}

std::vector<std::string> ExperimentRunner::source_ids() const {
  std::vector<std::string> out;
  for (const auto& s : universe_) out.push_back(s.id());
  std::sort(out.begin(), out.end());
  return out;
}

const ModelParams& ExperimentRunner::source_model(const std::string& source_id) {
  auto it = source_models_.find(source_id);
  if (it == source_models_.end()) {
    TrainResult r = train_local(silo_by_id(source_id), config_.split, config_.train);
    it = source_models_.emplace(source_id, std::move(r.params)).first;
  }
  return it->second;
}

void ExperimentRunner::ensure_direct() {
  if (!direct_done_) run_direct_matrix();
}

void ExperimentRunner::ensure_msti() {
  if (!msti_done_) run_msti_experiment();
}

void ExperimentRunner::run_direct_matrix() {
  if (direct_done_) return;
  universe();
  const EvalConfig eval{ThresholdPolicy::Kind::default_threshold,
                        config_.group_floor};

  // Ideal-local reference per community-college target.
  for (const auto* target : community_targets()) {
    ResultRow row;
    row.experiment_id = config_.experiment_id;
    row.scheme = "local";
    row.source = target->id();
    row.target = target->id();
    row.seed = config_.train.seed;
    try {
      const ModelParams& m = source_model(target->id());
      row.report = evaluate_on_silo(m, *target, config_.split, eval);
    } catch (const Error& e) {
      row.error = e.what();
    }
    store_.append(std::move(row));
  }

  for (const std::string& source : source_ids()) {
    for (const auto* target : community_targets()) {
      if (target->id() == source) continue;
      ResultRow row;
      row.experiment_id = config_.experiment_id;
      row.scheme = "direct";
      row.source = source;
      row.target = target->id();
      row.seed = config_.train.seed;
      try {
        const ModelParams& m = source_model(source);
        row.report = evaluate_on_silo(m, *target, config_.split, eval);
      } catch (const Error& e) {
        row.error = e.what();
      }
      store_.append(std::move(row));
    }
  }
  direct_done_ = true;
}

std::pair<RegressionFit, RegressionFit>
ExperimentRunner::run_similarity_regression() {
  if (regressions_) return *regressions_;
  ensure_direct();
  const SimilarityMatrix& sims = similarity();

  std::map<std::string, double> local_auc;
  for (const auto& r : store_.rows()) {
    if (r.experiment_id == config_.experiment_id && r.scheme == "local" &&
        r.error.empty() && r.report.auc) {
      local_auc[r.target] = *r.report.auc;
    }
  }

  std::vector<double> y_drop, y_gap;
  std::vector<SimilarityVector> x_drop, x_gap;
  for (const auto& r : store_.rows()) {
    if (r.experiment_id != config_.experiment_id || r.scheme != "direct" ||
        !r.error.empty()) {
      continue;
    }
    const SimilarityVector sim = sims.category_similarity(r.source, r.target);
    auto lit = local_auc.find(r.target);
    if (lit != local_auc.end() && r.report.auc) {
      y_drop.push_back(lit->second - *r.report.auc);  // AUC drop of the transfer
      x_drop.push_back(sim);
    }
    if (r.report.auc_gap) {
      y_gap.push_back(*r.report.auc_gap);
      x_gap.push_back(sim);
    }
  }

  auto fit_one = [](const std::vector<double>& y,
                    const std::vector<SimilarityVector>& x) {
    const auto n = static_cast<Eigen::Index>(y.size());
    Eigen::MatrixXd design(n, 1 + kNumContextCategories);
    Eigen::VectorXd yv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      design(i, 0) = 1.0;
      for (std::size_t c = 0; c < kNumContextCategories; ++c) {
        design(i, 1 + static_cast<Eigen::Index>(c)) =
            x[static_cast<std::size_t>(i)][c];
      }
      yv(i) = y[static_cast<std::size_t>(i)];
    }
    std::vector<std::string> names{"intercept"};
    for (ContextCategory c : all_context_categories()) {
      names.push_back(to_string(c));
    }
    return ols_fit(yv, design, std::move(names));
  };

  regressions_ = {fit_one(y_drop, x_drop), fit_one(y_gap, x_gap)};

  if (!out_dir_.empty()) {
    namespace fs = std::filesystem;
    {
      std::ofstream out(fs::path(out_dir_) /
                        (config_.experiment_id + "_regression_auc_drop.json"));
      out << regressions_->first.to_json() << "\n";
    }
    {
      std::ofstream out(fs::path(out_dir_) /
                        (config_.experiment_id + "_regression_auc_gap.json"));
      out << regressions_->second.to_json() << "\n";
    }
    {
      std::ofstream out(fs::path(out_dir_) /
                        (config_.experiment_id + "_similarity.csv"));
      out << similarity().to_csv(weights().weights);
    }
  }
  return *regressions_;
}

const WeightVector& ExperimentRunner::weights() {
  if (!weights_) {
    if (!regressions_) run_similarity_regression();
    weights_ = cs_weights(regressions_->first, config_.included_categories);
  }
  return *weights_;
}

double ExperimentRunner::expected_auc(const std::string& target) const {
  std::vector<double> aucs;
  for (const auto& r : store_.rows()) {
    if (r.experiment_id == config_.experiment_id && r.scheme == "direct" &&
        r.target == target && r.error.empty() && r.report.auc) {
      aucs.push_back(*r.report.auc);
    }
  }
  if (aucs.empty()) throw Error("no direct rows for target " + target);
  return std::accumulate(aucs.begin(), aucs.end(), 0.0) /
         static_cast<double>(aucs.size());
}

void ExperimentRunner::run_msti_experiment() {
  if (msti_done_) return;
  ensure_direct();
  const WeightVector& w = weights();
  const SimilarityMatrix& sims = similarity();
  const std::vector<std::string> candidates = source_ids();

  for (const auto* target : community_targets()) {
    ResultRow row;
    row.experiment_id = config_.experiment_id;
    row.scheme = "msti";
    row.target = target->id();
    row.seed = config_.train.seed;
    try {
      const std::string msti = select_msti(target->id(), candidates, sims, w);
      msti_by_target_[target->id()] = msti;
      row.source = msti;
      // The MSTI model is the direct-transfer model of the chosen source;
      // its evaluation on this target is already materialized.
      bool found = false;
      for (const auto& r : store_.rows()) {
        if (r.experiment_id == config_.experiment_id && r.scheme == "direct" &&
            r.source == msti && r.target == target->id() && r.error.empty()) {
          row.report = r.report;
          found = true;
          break;
        }
      }
      if (!found) throw Error("direct row missing for MSTI pair");
    } catch (const Error& e) {
      row.error = e.what();
    }
    store_.append(std::move(row));
  }
  msti_done_ = true;
}

void ExperimentRunner::run_sequential_experiment() {
  ensure_msti();
  const WeightVector& w = weights();
  const SimilarityMatrix& sims = similarity();
  const std::vector<std::string> candidates = source_ids();
  const EvalConfig eval{ThresholdPolicy::Kind::default_threshold,
                        config_.group_floor};

  TrainConfig stage2 = config_.train;
  stage2.ewc_lambda = config_.sequential_lambda;
  stage2.optimizer = config_.sequential_optimizer;
  stage2.learning_rate = config_.sequential_learning_rate;

  for (const auto* target : community_targets()) {
    auto mit = msti_by_target_.find(target->id());
    if (mit == msti_by_target_.end()) continue;
    const std::string& msti = mit->second;

    ResultRow row;
    row.experiment_id = config_.experiment_id;
    row.scheme = "sequential";
    row.source = msti;
    row.target = target->id();
    row.seed = config_.train.seed;
    try {
      const auto partner = select_sequential_partner(
          target->id(), msti, candidates, sims, w, config_.partner_floor,
          config_.partner_reference);
      if (!partner) {
        row.error = "no partner with overall similarity above " +
                    std::to_string(config_.partner_floor);
        store_.append(std::move(row));
        continue;
      }
      row.partner = *partner;

      const InstitutionSilo& msti_silo = silo_by_id(msti);
      const ModelParams& stage1 = source_model(msti);
      FisherDiagonal fisher = compute_fisher_diagonal(
          stage1, msti_silo, config_.split, config_.fisher_sample_cap,
          config_.train.seed);
      const TransferArtifact artifact =
          make_artifact(stage1, std::move(fisher), {msti},
                        config_digest_of(config_.to_json()));
      TrainResult seq = train_sequential_ewc(artifact, silo_by_id(*partner),
                                             config_.split, stage2);
      row.report = evaluate_on_silo(seq.params, *target, config_.split, eval);
    } catch (const Error& e) {
      row.error = e.what();
    }
    store_.append(std::move(row));
  }
}

void ExperimentRunner::run_sfda_experiment() {
  ensure_direct();
  const EvalConfig eval{ThresholdPolicy::Kind::default_threshold,
                        config_.group_floor};
  const std::vector<AdaptMethod> methods = {
      AdaptMethod::shot, AdaptMethod::tent, AdaptMethod::pseudo_label};

  for (const std::string& source : source_ids()) {
    for (const auto* target : community_targets()) {
      if (target->id() == source) continue;
      Eigen::MatrixXd features;
      try {
        features = target->test_features(config_.split);
      } catch (const Error&) {
        continue;
      }
      for (AdaptMethod method : methods) {
        for (std::uint64_t seed = 0; seed < config_.sfda_seeds; ++seed) {
          ResultRow row;
          row.experiment_id = config_.experiment_id;
          row.scheme = to_string(method);
          row.source = source;
          row.target = target->id();
          row.seed = seed;
          try {
            AdaptConfig ac = config_.adapt;
            ac.method = method;
            ac.seed = seed;
            const AdaptResult res = adapt(source_model(source), features, ac);
            row.report =
                evaluate_on_silo(res.params, *target, config_.split, eval);
          } catch (const Error& e) {
            row.error = e.what();
          }
          store_.append(std::move(row));
        }
      }
    }
  }
}

void ExperimentRunner::run_threshold_experiment() {
  ensure_direct();
  const std::vector<ThresholdPolicy::Kind> kinds = {
      ThresholdPolicy::Kind::default_threshold,
      ThresholdPolicy::Kind::overall_optimal,
      ThresholdPolicy::Kind::group_optimal};

  for (const std::string& source : source_ids()) {
    for (const auto* target : community_targets()) {
      if (target->id() == source) continue;
      for (ThresholdPolicy::Kind kind : kinds) {
        ResultRow row;
        row.experiment_id = config_.experiment_id;
        row.scheme = "threshold/" + to_string(kind);
        row.source = source;
        row.target = target->id();
        row.seed = config_.train.seed;
        try {
          const EvalConfig eval{kind, config_.group_floor};
          row.report = evaluate_on_silo(source_model(source), *target,
                                        config_.split, eval);
        } catch (const Error& e) {
          row.error = e.what();
        }
        store_.append(std::move(row));
      }
    }
  }
}

void ExperimentRunner::run_family(const std::string& family) {
  if (family == "direct") run_direct_matrix();
  else if (family == "similarity") run_similarity_regression();
  else if (family == "msti") run_msti_experiment();
  else if (family == "sequential") run_sequential_experiment();
  else if (family == "sfda") run_sfda_experiment();
  else if (family == "thresholds") run_threshold_experiment();
  else if (family == "all") {
    run_direct_matrix();
    run_similarity_regression();
    run_msti_experiment();
    run_sequential_experiment();
    run_sfda_experiment();
    run_threshold_experiment();
  } else {
    throw ConfigError("unknown experiment family '" + family + "'");
  }
}

std::vector<std::string> ExperimentRunner::emit(const std::string& format) {
  if (out_dir_.empty()) throw ConfigError("runner has no output directory");
  return emit_report(store_, config_.experiment_id, format, out_dir_,
                     config_.strata);
}

}  // namespace silobench
