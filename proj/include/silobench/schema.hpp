#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace silobench {

enum class FieldKind { numeric, categorical };

// One predictor in the shared student-level schema.
struct FieldSpec {
  std::string name;
  FieldKind kind = FieldKind::numeric;
  std::vector<std::string> levels;  // categorical only

  std::size_t level_index(const std::string& level) const;  // throws SchemaError
};

// Declarative descriptor of the feature columns every institution shares.
// Loaded from config; the label and sensitive-attribute columns
// (cohort_year, gender, urm, retained) are fixed and live outside of it.
class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<FieldSpec> fields);

  const std::vector<FieldSpec>& fields() const { return fields_; }
  std::size_t size() const { return fields_.size(); }

  // Width of the model input: numerics map to one column, categoricals
  // to a one-hot block.
  std::size_t encoded_dim() const;

  // Encode raw feature vectors (categorical levels stored as level indices)
  // into the dense model input, one row per record. Rows must be complete;
  // missing cells (NaN) are rejected here, imputation happens upstream.
  Eigen::MatrixXd encode(const std::vector<std::vector<double>>& raw) const;

  static Schema from_json(const std::string& json_text);
  std::string to_json() const;

 private:
  std::vector<FieldSpec> fields_;
};

}  // namespace silobench
