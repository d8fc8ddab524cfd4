#include "silobench/metrics.hpp"

#include <nlohmann/json.hpp>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "silobench/errors.hpp"

namespace silobench {

void ScoredPredictions::validate() const {
  const auto n = static_cast<std::size_t>(scores.size());
  if (labels.size() != n || groups.size() != n) {
    throw ValidationError("scores/labels/groups lengths differ");
  }
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!(scores(i) >= 0.0 && scores(i) <= 1.0)) {
      throw ValidationError("score outside [0,1] at index " + std::to_string(i));
    }
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError("labels must be 0/1");
  }
}

double auc(const Eigen::VectorXd& scores, const std::vector<int>& labels) {
  const auto n = static_cast<std::size_t>(scores.size());
  if (labels.size() != n) throw ValidationError("scores/labels length mismatch");
  std::size_t n_pos = 0;
  for (int l : labels) n_pos += l == 1 ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError("AUC undefined: single-class input");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
    return scores(static_cast<Eigen::Index>(a)) <
           scores(static_cast<Eigen::Index>(b));
  });

  // Average ranks over tie blocks; rank sum of positives gives Mann-Whitney U.
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n &&
           scores(static_cast<Eigen::Index>(order[j + 1])) ==
               scores(static_cast<Eigen::Index>(order[i]))) {
      ++j;
    }
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) pos_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double u = pos_rank_sum -
                   static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc(const ScoredPredictions& preds) {
  preds.validate();
  return auc(preds.scores, preds.labels);
}

double delta_auc(double auc_t, double auc_t_prime) { return auc_t - auc_t_prime; }

AucGapResult auc_gap(const ScoredPredictions& preds,
                     const std::set<GroupKey>& eligible) {
  preds.validate();
  AucGapResult out;

  for (const GroupKey& g : eligible) {
    std::vector<double> s;
    std::vector<int> l;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds.groups[i] == g) {
        s.push_back(preds.scores(static_cast<Eigen::Index>(i)));
        l.push_back(preds.labels[i]);
      }
    }
    bool has_pos = std::find(l.begin(), l.end(), 1) != l.end();
    bool has_neg = std::find(l.begin(), l.end(), 0) != l.end();
    if (s.empty() || !has_pos || !has_neg) {
      out.excluded.push_back(g);
      continue;
    }
    Eigen::VectorXd sv = Eigen::Map<Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
    out.per_group[g] = auc(sv, l);
  }

  if (out.per_group.size() < 2) {
    throw UndefinedMetricError("AUC Gap undefined: fewer than 2 usable groups");
  }
  double best = -1.0;
  for (auto a = out.per_group.begin(); a != out.per_group.end(); ++a) {
    for (auto b = std::next(a); b != out.per_group.end(); ++b) {
      const double d = std::abs(a->second - b->second);
      if (d > best) {
        best = d;
        if (a->second <= b->second) {
          out.worst_low = a->first;
          out.worst_high = b->first;
        } else {
          out.worst_low = b->first;
          out.worst_high = a->first;
        }
      }
    }
  }
  out.gap = best;
  return out;
}

namespace {

double threshold_for(const ThresholdSpec& spec, const GroupKey& g) {
  if (std::holds_alternative<double>(spec)) return std::get<double>(spec);
  const auto& m = std::get<std::map<GroupKey, double>>(spec);
  auto it = m.find(g);
  if (it == m.end()) {
    throw ThresholdError("no threshold for group " + g.label());
  }
  return it->second;
}

void check_spec(const ThresholdSpec& spec) {
  auto check = [](double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
      throw ThresholdError("threshold outside [0,1]");
    }
  };
  if (std::holds_alternative<double>(spec)) {
    check(std::get<double>(spec));
  } else {
    for (const auto& [g, t] : std::get<std::map<GroupKey, double>>(spec)) check(t);
  }
}

}  // namespace

ConfusionBreakdown confusion(const ScoredPredictions& preds,
                             const ThresholdSpec& thresholds) {
  preds.validate();
  check_spec(thresholds);
  ConfusionBreakdown out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const GroupKey g = preds.groups[i];
    const double t = threshold_for(thresholds, g);
    const bool predicted = preds.scores(static_cast<Eigen::Index>(i)) >= t;
    const bool actual = preds.labels[i] == 1;
    auto& cg = out.per_group[g];
    if (predicted && actual) { ++out.overall.tp; ++cg.tp; }
    else if (predicted && !actual) { ++out.overall.fp; ++cg.fp; }
    else if (!predicted && !actual) { ++out.overall.tn; ++cg.tn; }
    else { ++out.overall.fn; ++cg.fn; }
  }
  return out;
}

double mcc(const ConfusionCounts& c) {
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  const double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  if (denom == 0.0) return 0.0;  // degenerate marginal
  return (tp * tn - fp * fn) / std::sqrt(denom);
}

double specificity(const ConfusionCounts& c) {
  if (c.tn + c.fp == 0) {
    throw UndefinedMetricError("specificity undefined: no actual negatives");
  }
  return static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
}

double equalized_odds(const ScoredPredictions& preds,
                      const ThresholdSpec& thresholds, EoAttribute attribute) {
  preds.validate();
  check_spec(thresholds);

  // side 0 / side 1 of the protected attribute; gender compares female vs
  // male (gender==other is outside this comparison).
  auto side_of = [attribute](const GroupKey& g) -> int {
    if (attribute == EoAttribute::urm) return g.urm ? 1 : 0;
    if (g.gender == Gender::female) return 0;
    if (g.gender == Gender::male) return 1;
    return -1;
  };

  ConfusionCounts side[2];
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int s = side_of(preds.groups[i]);
    if (s < 0) continue;
    const double t = threshold_for(thresholds, preds.groups[i]);
    const bool predicted = preds.scores(static_cast<Eigen::Index>(i)) >= t;
    const bool actual = preds.labels[i] == 1;
    auto& c = side[s];
    if (predicted && actual) ++c.tp;
    else if (predicted && !actual) ++c.fp;
    else if (!predicted && !actual) ++c.tn;
    else ++c.fn;
  }

  const char* names[2] = {
      attribute == EoAttribute::urm ? "non-URM" : "female",
      attribute == EoAttribute::urm ? "URM" : "male"};
  double tpr[2], tnr[2];
  for (int s = 0; s < 2; ++s) {
    if (side[s].tp + side[s].fn == 0) {
      throw UndefinedMetricError(std::string("EO undefined: group ") + names[s] +
                                 " has no positives");
    }
    if (side[s].tn + side[s].fp == 0) {
      throw UndefinedMetricError(std::string("EO undefined: group ") + names[s] +
                                 " has no negatives");
    }
    tpr[s] = static_cast<double>(side[s].tp) /
             static_cast<double>(side[s].tp + side[s].fn);
    tnr[s] = static_cast<double>(side[s].tn) /
             static_cast<double>(side[s].tn + side[s].fp);
  }
  return 0.5 * (std::abs(tpr[0] - tpr[1]) + std::abs(tnr[0] - tnr[1]));
}

double wasserstein_1d(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.empty() || q.empty()) {
    throw ValidationError("wasserstein_1d: empty sample");
  }
  std::vector<double> a = p, b = q;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());

  // Integrate |F_P - F_Q| between consecutive breakpoints of the merged
  // support; the CDFs are step functions, so this is exact.
  std::size_t ia = 0, ib = 0;
  double prev = std::min(a.front(), b.front());
  double total = 0.0;
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  while (ia < a.size() || ib < b.size()) {
    const double next = [&] {
      if (ia == a.size()) return b[ib];
      if (ib == b.size()) return a[ia];
      return std::min(a[ia], b[ib]);
    }();
    total += std::abs(static_cast<double>(ia) / na -
                      static_cast<double>(ib) / nb) *
             (next - prev);
    prev = next;
    while (ia < a.size() && a[ia] == next) ++ia;
    while (ib < b.size() && b[ib] == next) ++ib;
  }
  return total;
}

double combined_range(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.empty() || q.empty()) {
    throw ValidationError("combined_range: empty sample");
  }
  const auto [pmin, pmax] = std::minmax_element(p.begin(), p.end());
  const auto [qmin, qmax] = std::minmax_element(q.begin(), q.end());
  return std::max(*pmax, *qmax) - std::min(*pmin, *qmin);
}

Wtndd wtndd(double distance, double range) {
  if (distance < 0.0 || range < 0.0) {
    throw ValidationError("wtndd: negative input");
  }
  // Strict: a distance of exactly 5% of the range is already notable.
  return distance < 0.05 * range || (range == 0.0 && distance == 0.0)
             ? Wtndd::pass
             : Wtndd::fail;
}

std::string to_string(Wtndd v) { return v == Wtndd::pass ? "pass" : "fail"; }

// -- MetricReport JSON --------------------------------------------------------

namespace {

nlohmann::json opt_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

nlohmann::json confusion_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

GroupKey group_from_label(const std::string& label) {
  const auto slash = label.find('/');
  if (slash == std::string::npos) throw ParseError("bad group label " + label);
  GroupKey g;
  g.gender = gender_from_string(label.substr(0, slash));
  const std::string urm = label.substr(slash + 1);
  if (urm == "urm") g.urm = true;
  else if (urm == "non_urm") g.urm = false;
  else throw ParseError("bad group label " + label);
  return g;
}

}  // namespace

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["auc"] = opt_json(auc);
  j["auc_gap"] = opt_json(auc_gap);
  if (auc_gap_pair) {
    j["auc_gap_pair"] = {auc_gap_pair->first.label(), auc_gap_pair->second.label()};
  } else {
    j["auc_gap_pair"] = nullptr;
  }
  j["mcc"] = opt_json(mcc);
  j["specificity"] = opt_json(specificity);
  j["eo_gender"] = opt_json(eo_gender);
  j["eo_urm"] = opt_json(eo_urm);
  j["threshold_kind"] = threshold_kind;
  j["overall_rate_used"] = opt_json(overall_rate_used);
  for (const auto& [g, t] : thresholds_used) j["thresholds_used"][g.label()] = t;
  for (const auto& [g, r] : rates_used) j["rates_used"][g.label()] = r;
  for (const auto& [g, a] : per_group_auc) j["per_group_auc"][g.label()] = a;
  for (const auto& [g, c] : per_group_confusion) {
    j["per_group_confusion"][g.label()] = confusion_json(c);
  }
  j["exclusions"] = exclusions;
  return j.dump();
}

MetricReport MetricReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("MetricReport JSON: ") + e.what());
  }
  MetricReport r;
  auto opt = [&j](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  r.auc = opt("auc");
  r.auc_gap = opt("auc_gap");
  if (j.contains("auc_gap_pair") && !j.at("auc_gap_pair").is_null()) {
    r.auc_gap_pair = {group_from_label(j["auc_gap_pair"][0].get<std::string>()),
                      group_from_label(j["auc_gap_pair"][1].get<std::string>())};
  }
  r.mcc = opt("mcc");
  r.specificity = opt("specificity");
  r.eo_gender = opt("eo_gender");
  r.eo_urm = opt("eo_urm");
  r.threshold_kind = j.value("threshold_kind", "");
  r.overall_rate_used = opt("overall_rate_used");
  if (j.contains("thresholds_used")) {
    for (const auto& [k, v] : j["thresholds_used"].items()) {
      r.thresholds_used[group_from_label(k)] = v.get<double>();
    }
  }
  if (j.contains("rates_used")) {
    for (const auto& [k, v] : j["rates_used"].items()) {
      r.rates_used[group_from_label(k)] = v.get<double>();
    }
  }
  if (j.contains("per_group_auc")) {
    for (const auto& [k, v] : j["per_group_auc"].items()) {
      r.per_group_auc[group_from_label(k)] = v.get<double>();
    }
  }
  if (j.contains("per_group_confusion")) {
    for (const auto& [k, v] : j["per_group_confusion"].items()) {
      ConfusionCounts c;
      c.tp = v.at("tp").get<std::size_t>();
      c.fp = v.at("fp").get<std::size_t>();
      c.tn = v.at("tn").get<std::size_t>();
      c.fn = v.at("fn").get<std::size_t>();
      r.per_group_confusion[group_from_label(k)] = c;
    }
  }
  if (j.contains("exclusions")) {
    r.exclusions = j["exclusions"].get<std::vector<std::string>>();
  }
  return r;
}

}  // namespace silobench
