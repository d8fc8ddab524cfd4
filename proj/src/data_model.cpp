#include "silobench/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "silobench/errors.hpp"

namespace silobench {

std::string to_string(Gender g) {
  switch (g) {
    case Gender::female: return "female";
    case Gender::male: return "male";
    case Gender::other: return "other";
  }
  return "other";
}

Gender gender_from_string(const std::string& s) {
  if (s == "female") return Gender::female;
  if (s == "male") return Gender::male;
  if (s == "other") return Gender::other;
  throw SchemaError("unknown gender level '" + s + "'");
}

std::string to_string(SiloKind k) {
  return k == SiloKind::university ? "university" : "community_college";
}

std::string GroupKey::label() const {
  return to_string(gender) + (urm ? "/urm" : "/non_urm");
}

void CohortSplit::validate() const {
  if (train_years.empty()) throw ConfigError("cohort split: empty train years");
  if (train_years.count(test_year)) {
    throw ConfigError("cohort split: test year " + std::to_string(test_year) +
                      " overlaps train years");
  }
}

const std::array<ContextCategory, kNumContextCategories>& all_context_categories() {
  static const std::array<ContextCategory, kNumContextCategories> cats = {
      ContextCategory::school,     ContextCategory::academic,
      ContextCategory::demographic, ContextCategory::completion,
      ContextCategory::cost,       ContextCategory::financial_aid};
  return cats;
}

std::string to_string(ContextCategory c) {
  switch (c) {
    case ContextCategory::school: return "school";
    case ContextCategory::academic: return "academic";
    case ContextCategory::demographic: return "demographic";
    case ContextCategory::completion: return "completion";
    case ContextCategory::cost: return "cost";
    case ContextCategory::financial_aid: return "financial_aid";
  }
  return "school";
}

ContextCategory context_category_from_string(const std::string& s) {
  for (ContextCategory c : all_context_categories()) {
    if (to_string(c) == s) return c;
  }
  throw SchemaError("unknown context category '" + s + "'");
}

std::vector<ContextValue>& ContextualProfile::category(ContextCategory c) {
  return categories_[static_cast<std::size_t>(c)];
}

const std::vector<ContextValue>& ContextualProfile::category(
    ContextCategory c) const {
  return categories_[static_cast<std::size_t>(c)];
}

void ContextualProfile::validate() const {
  for (ContextCategory c : all_context_categories()) {
    for (const auto& v : category(c)) {
      if (v.kind == FieldKind::numeric && !v.missing && !std::isfinite(v.number)) {
        throw ValidationError("non-finite numeric context attribute in " +
                              to_string(c));
      }
    }
  }
}

std::set<GroupKey> GroupPartition::eligible() const {
  std::set<GroupKey> out;
  for (const auto& [key, idx] : indices) {
    if (!below_floor.count(key)) out.insert(key);
  }
  return out;
}

GroupPartition partition_groups(const std::vector<StudentRecord>& records,
                                std::size_t floor) {
  GroupPartition part;
  for (std::size_t i = 0; i < records.size(); ++i) {
    part.indices[records[i].group()].push_back(i);
  }
  for (const auto& [key, idx] : part.indices) {
    if (idx.size() < floor) part.below_floor.insert(key);
  }
  return part;
}

SplitResult split_cohorts(const std::vector<StudentRecord>& records,
                          const CohortSplit& split) {
  split.validate();
  SplitResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int y = records[i].cohort_year;
    if (split.train_years.count(y)) {
      out.train.push_back(i);
    } else if (y == split.test_year) {
      out.test.push_back(i);
    } else {
      ++out.dropped;
    }
  }
  if (out.train.empty()) throw DegenerateSplitError("empty train partition");
  if (out.test.empty()) throw DegenerateSplitError("empty test partition");
  return out;
}

namespace {

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Silo-local imputation: numeric -> median, categorical -> mode. The
// statistics are computed and consumed here; they never leave the silo.
void impute_in_place(std::vector<StudentRecord>& records, const Schema& schema) {
  const auto& fields = schema.fields();
  for (std::size_t f = 0; f < fields.size(); ++f) {
    bool any_missing = false;
    for (const auto& r : records) {
      if (std::isnan(r.features[f])) { any_missing = true; break; }
    }
    if (!any_missing) continue;

    double fill = 0.0;
    if (fields[f].kind == FieldKind::numeric) {
      std::vector<double> present;
      for (const auto& r : records) {
        if (!std::isnan(r.features[f])) present.push_back(r.features[f]);
      }
      if (present.empty()) {
        throw ValidationError("feature '" + fields[f].name +
                              "' is missing in every record");
      }
      fill = median_of(std::move(present));
    } else {
      std::vector<std::size_t> counts(fields[f].levels.size(), 0);
      bool any = false;
      for (const auto& r : records) {
        if (!std::isnan(r.features[f])) {
          ++counts[static_cast<std::size_t>(r.features[f])];
          any = true;
        }
      }
      if (!any) {
        throw ValidationError("feature '" + fields[f].name +
                              "' is missing in every record");
      }
      fill = static_cast<double>(
          std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
    for (auto& r : records) {
      if (std::isnan(r.features[f])) r.features[f] = fill;
    }
  }
}

}  // namespace

InstitutionSilo::InstitutionSilo(std::string id, SiloKind kind,
                                 std::vector<StudentRecord> records,
                                 ContextualProfile context, Schema schema)
    : id_(std::move(id)),
      kind_(kind),
      records_(std::move(records)),
      context_(std::move(context)),
      schema_(std::move(schema)) {
  context_.validate();
  for (const auto& r : records_) {
    if (r.features.size() != schema_.size()) {
      throw ValidationError("silo " + id_ +
                            ": record feature length does not match schema");
    }
  }
  impute_in_place(records_, schema_);
}

std::size_t InstitutionSilo::cohort_count(int year) const {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(),
                    [year](const StudentRecord& r) { return r.cohort_year == year; }));
}

double InstitutionSilo::historical_retention_rate(const CohortSplit& split) const {
  std::size_t n = 0, retained = 0;
  for (const auto& r : records_) {
    if (split.train_years.count(r.cohort_year)) {
      ++n;
      retained += r.retained ? 1 : 0;
    }
  }
  if (n == 0) {
    throw DegenerateSplitError("silo " + id_ + ": no historical records");
  }
  return static_cast<double>(retained) / static_cast<double>(n);
}

std::map<GroupKey, double> InstitutionSilo::historical_group_rates(
    const CohortSplit& split) const {
  std::map<GroupKey, std::pair<std::size_t, std::size_t>> acc;  // n, retained
  for (const auto& r : records_) {
    if (split.train_years.count(r.cohort_year)) {
      auto& [n, ret] = acc[r.group()];
      ++n;
      ret += r.retained ? 1 : 0;
    }
  }
  std::map<GroupKey, double> out;
  for (const auto& [key, nr] : acc) {
    out[key] = static_cast<double>(nr.second) / static_cast<double>(nr.first);
  }
  return out;
}

std::map<GroupKey, std::size_t> InstitutionSilo::group_sizes(
    const CohortSplit& split, bool test_cohort) const {
  std::map<GroupKey, std::size_t> out;
  for (const auto& r : records_) {
    const bool in = test_cohort ? r.cohort_year == split.test_year
                                : split.train_years.count(r.cohort_year) > 0;
    if (in) ++out[r.group()];
  }
  return out;
}

Eigen::MatrixXd InstitutionSilo::test_features(const CohortSplit& split) const {
  const SplitResult idx = split_cohorts(records_, split);
  std::vector<std::vector<double>> raw;
  raw.reserve(idx.test.size());
  for (std::size_t i : idx.test) raw.push_back(records_[i].features);
  return schema_.encode(raw);
}

// -- CSV ---------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_number(const std::string& s, std::size_t row, const std::string& col) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("row " + std::to_string(row) + ": bad numeric value '" +
                     s + "' in column '" + col + "'");
  }
}

}  // namespace

std::vector<StudentRecord> load_students_csv(const std::string& path,
                                             const Schema& schema,
                                             const YearRange& years) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path + "' is empty");
  const auto header = split_csv_line(line);

  std::vector<std::string> expected;
  for (const auto& f : schema.fields()) expected.push_back(f.name);
  expected.insert(expected.end(), {"cohort_year", "gender", "urm", "retained"});
  if (header != expected) {
    std::string want;
    for (const auto& h : expected) want += h + ",";
    throw SchemaError("'" + path + "': header does not match schema (want " +
                      want + ")");
  }

  std::vector<StudentRecord> records;
  std::size_t row = 1;
  const std::size_t nf = schema.size();
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != expected.size()) {
      throw ParseError("row " + std::to_string(row) + ": expected " +
                       std::to_string(expected.size()) + " cells, got " +
                       std::to_string(cells.size()));
    }
    StudentRecord r;
    r.features.resize(nf);
    for (std::size_t f = 0; f < nf; ++f) {
      const auto& spec = schema.fields()[f];
      if (cells[f].empty()) {
        r.features[f] = std::nan("");
      } else if (spec.kind == FieldKind::numeric) {
        r.features[f] = parse_number(cells[f], row, spec.name);
      } else {
        r.features[f] = static_cast<double>(spec.level_index(cells[f]));
      }
    }
    r.cohort_year = static_cast<int>(parse_number(cells[nf], row, "cohort_year"));
    if (r.cohort_year < years.first || r.cohort_year > years.last) {
      throw ValidationError("row " + std::to_string(row) + ": cohort_year " +
                            std::to_string(r.cohort_year) +
                            " outside configured range " +
                            std::to_string(years.first) + "-" +
                            std::to_string(years.last));
    }
    r.gender = gender_from_string(cells[nf + 1]);
    const std::string& urm = cells[nf + 2];
    if (urm != "0" && urm != "1") {
      throw ParseError("row " + std::to_string(row) + ": urm must be 0/1");
    }
    r.urm = urm == "1";
    const std::string& label = cells[nf + 3];
    if (label != "0" && label != "1") {
      // Rows with a missing or malformed label are rejected, not skipped.
      throw ParseError("row " + std::to_string(row) + ": retained must be 0/1");
    }
    r.retained = label == "1";
    records.push_back(std::move(r));
  }
  return records;
}

std::map<std::string, ContextualProfile> load_context_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError("'" + path + "' is empty");
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "institution") {
    throw SchemaError("context CSV must start with an 'institution' column");
  }

  // Column -> (category, attribute name); prefix encodes the category.
  std::vector<ContextCategory> col_cat;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto dot = header[c].find('.');
    if (dot == std::string::npos) {
      throw SchemaError("context column '" + header[c] +
                        "' lacks a category prefix");
    }
    col_cat.push_back(context_category_from_string(header[c].substr(0, dot)));
  }

  // First pass: read cells; a column is numeric when every non-empty cell
  // parses as a number.
  std::vector<std::string> ids;
  std::vector<std::vector<std::string>> cells;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto parts = split_csv_line(line);
    if (parts.size() != header.size()) {
      throw ParseError("row " + std::to_string(row) + ": expected " +
                       std::to_string(header.size()) + " cells");
    }
    ids.push_back(parts[0]);
    cells.emplace_back(parts.begin() + 1, parts.end());
  }

  const std::size_t ncols = header.size() - 1;
  std::vector<bool> numeric(ncols, true);
  for (std::size_t c = 0; c < ncols; ++c) {
    for (const auto& r : cells) {
      if (r[c].empty()) continue;
      try {
        std::size_t pos = 0;
        (void)std::stod(r[c], &pos);
        if (pos != r[c].size()) { numeric[c] = false; break; }
      } catch (const std::exception&) {
        numeric[c] = false;
        break;
      }
    }
  }

  std::map<std::string, ContextualProfile> out;
  for (std::size_t r = 0; r < ids.size(); ++r) {
    ContextualProfile profile;
    for (std::size_t c = 0; c < ncols; ++c) {
      ContextValue v;
      if (cells[r][c].empty()) {
        v.kind = numeric[c] ? FieldKind::numeric : FieldKind::categorical;
        v.missing = true;
      } else if (numeric[c]) {
        v.kind = FieldKind::numeric;
        v.number = std::stod(cells[r][c]);
      } else {
        v.kind = FieldKind::categorical;
        v.label = cells[r][c];
      }
      profile.category(col_cat[c]).push_back(std::move(v));
    }
    profile.validate();
    out.emplace(ids[r], std::move(profile));
  }
  return out;
}

void write_students_csv(const std::string& path, const Schema& schema,
                        const std::vector<StudentRecord>& records) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  for (const auto& f : schema.fields()) out << f.name << ",";
  out << "cohort_year,gender,urm,retained\n";
  std::ostringstream buf;
  buf.precision(17);
  for (const auto& r : records) {
    buf.str("");
    for (std::size_t f = 0; f < schema.size(); ++f) {
      const auto& spec = schema.fields()[f];
      if (std::isnan(r.features[f])) {
        // empty cell = missing
      } else if (spec.kind == FieldKind::numeric) {
        buf << r.features[f];
      } else {
        buf << spec.levels[static_cast<std::size_t>(r.features[f])];
      }
      buf << ",";
    }
    buf << r.cohort_year << "," << to_string(r.gender) << "," << (r.urm ? 1 : 0)
        << "," << (r.retained ? 1 : 0) << "\n";
    out << buf.str();
  }
}

void write_context_csv(const std::string& path,
                       const std::vector<const InstitutionSilo*>& silos) {
  if (silos.empty()) throw ConfigError("no silos to write");
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  out << "institution";
  const auto& first = silos.front()->context();
  for (ContextCategory c : all_context_categories()) {
    for (std::size_t a = 0; a < first.category(c).size(); ++a) {
      out << "," << to_string(c) << ".a" << a;
    }
  }
  out << "\n";
  out.precision(17);
  for (const auto* s : silos) {
    out << s->id();
    for (ContextCategory c : all_context_categories()) {
      for (const auto& v : s->context().category(c)) {
        out << ",";
        if (v.missing) continue;
        if (v.kind == FieldKind::numeric) {
          out << v.number;
        } else {
          out << v.label;
        }
      }
    }
    out << "\n";
  }
}

}  // namespace silobench
