#include "silobench/schema.hpp"

#include <nlohmann/json.hpp>
#include <cmath>

#include "silobench/errors.hpp"

namespace silobench {

std::size_t FieldSpec::level_index(const std::string& level) const {
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] == level) return i;
  }
  throw SchemaError("unknown level '" + level + "' for field '" + name + "'");
}

Schema::Schema(std::vector<FieldSpec> fields) : fields_(std::move(fields)) {
  for (const auto& f : fields_) {
    if (f.name.empty()) throw SchemaError("schema field with empty name");
    if (f.kind == FieldKind::categorical && f.levels.size() < 2) {
      throw SchemaError("categorical field '" + f.name +
                        "' needs at least two levels");
    }
  }
}

std::size_t Schema::encoded_dim() const {
  std::size_t dim = 0;
  for (const auto& f : fields_) {
    dim += f.kind == FieldKind::numeric ? 1 : f.levels.size();
  }
  return dim;
}

Eigen::MatrixXd Schema::encode(
    const std::vector<std::vector<double>>& raw) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(raw.size()),
      static_cast<Eigen::Index>(encoded_dim()));
  for (std::size_t r = 0; r < raw.size(); ++r) {
    if (raw[r].size() != fields_.size()) {
      throw ValidationError("feature vector length " +
                            std::to_string(raw[r].size()) +
                            " does not match schema length " +
                            std::to_string(fields_.size()));
    }
    Eigen::Index col = 0;
    for (std::size_t f = 0; f < fields_.size(); ++f) {
      const double v = raw[r][f];
      if (std::isnan(v)) {
        throw ValidationError("missing value reached encode() at row " +
                              std::to_string(r) + ", field '" +
                              fields_[f].name + "'");
      }
      if (fields_[f].kind == FieldKind::numeric) {
        out(static_cast<Eigen::Index>(r), col++) = v;
      } else {
        const auto level = static_cast<std::size_t>(v);
        if (std::floor(v) != v || level >= fields_[f].levels.size()) {
          throw ValidationError("bad level index for field '" +
                                fields_[f].name + "'");
        }
        out(static_cast<Eigen::Index>(r), col + static_cast<Eigen::Index>(level)) = 1.0;
        col += static_cast<Eigen::Index>(fields_[f].levels.size());
      }
    }
  }
  return out;
}

Schema Schema::from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("schema JSON: ") + e.what());
  }
  std::vector<FieldSpec> fields;
  for (const auto& jf : j.at("fields")) {
    FieldSpec f;
    f.name = jf.at("name").get<std::string>();
    const auto kind = jf.at("kind").get<std::string>();
    if (kind == "numeric") {
      f.kind = FieldKind::numeric;
    } else if (kind == "categorical") {
      f.kind = FieldKind::categorical;
      f.levels = jf.at("levels").get<std::vector<std::string>>();
    } else {
      throw SchemaError("unknown field kind '" + kind + "'");
    }
    fields.push_back(std::move(f));
  }
  return Schema(std::move(fields));
}

std::string Schema::to_json() const {
  nlohmann::json j;
  j["fields"] = nlohmann::json::array();
  for (const auto& f : fields_) {
    nlohmann::json jf;
    jf["name"] = f.name;
    jf["kind"] = f.kind == FieldKind::numeric ? "numeric" : "categorical";
    if (f.kind == FieldKind::categorical) jf["levels"] = f.levels;
    j["fields"].push_back(jf);
  }
  return j.dump();
}

}  // namespace silobench
