#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "silobench/schema.hpp"

namespace silobench {

enum class Gender { female, male, other };
enum class SiloKind { university, community_college };

std::string to_string(Gender g);
Gender gender_from_string(const std::string& s);
std::string to_string(SiloKind k);

// Intersectional gender x URM cell.
struct GroupKey {
  Gender gender = Gender::female;
  bool urm = false;

  auto operator<=>(const GroupKey&) const = default;
  std::string label() const;  // e.g. "female/urm"
};

struct StudentRecord {
  int cohort_year = 0;
  std::vector<double> features;  // one slot per schema field; NaN = missing
  Gender gender = Gender::other;
  bool urm = false;
  bool retained = false;

  GroupKey group() const { return {gender, urm}; }
};

struct CohortSplit {
  std::set<int> train_years = {2013, 2014, 2015, 2016, 2017, 2018};
  int test_year = 2019;

  void validate() const;  // throws ConfigError when years overlap or empty
};

// Allowed cohort_year range for ingested records.
struct YearRange {
  int first = 2013;
  int last = 2019;
};

inline constexpr std::size_t kNumContextCategories = 6;

enum class ContextCategory {
  school,
  academic,
  demographic,
  completion,
  cost,
  financial_aid
};

const std::array<ContextCategory, kNumContextCategories>& all_context_categories();
std::string to_string(ContextCategory c);
ContextCategory context_category_from_string(const std::string& s);

// One institution-level attribute: numeric value or categorical label.
struct ContextValue {
  FieldKind kind = FieldKind::numeric;
  double number = 0.0;        // numeric only
  std::string label;          // categorical only
  bool missing = false;
};

// Public institution-level profile: six fixed categories of mixed attributes.
class ContextualProfile {
 public:
  ContextualProfile() = default;

  std::vector<ContextValue>& category(ContextCategory c);
  const std::vector<ContextValue>& category(ContextCategory c) const;

  void validate() const;  // finiteness of numeric attributes

 private:
  std::array<std::vector<ContextValue>, kNumContextCategories> categories_;
};

struct GroupPartition {
  std::map<GroupKey, std::vector<std::size_t>> indices;
  // Groups below the minimum-size floor: present in `indices`, but flagged
  // ineligible for AUC-Gap computations.
  std::set<GroupKey> below_floor;

  std::set<GroupKey> eligible() const;
};

// Partition records into intersectional groups. Every record lands in exactly
// one group; groups smaller than `floor` are flagged excluded-from-gap.
GroupPartition partition_groups(const std::vector<StudentRecord>& records,
                                std::size_t floor = 20);

struct SplitResult {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  std::size_t dropped = 0;  // records outside both partitions
};

// Partition by cohort_year. Throws DegenerateSplitError when either side
// comes out empty.
SplitResult split_cohorts(const std::vector<StudentRecord>& records,
                          const CohortSplit& split);

class InstitutionSilo;
struct ModelParams;
struct Gradients;
struct TrainConfig;
struct TrainResult;
struct TransferArtifact;
struct EvalConfig;
struct MetricReport;

// Grants access to the records inside a silo. Only the silo-scoped
// operations listed below can mint one; orchestrator code cannot. This
// friend list is the complete privacy surface over record-level data.
class SiloAccess {
  SiloAccess() = default;

  friend TrainResult train_local(const InstitutionSilo&, const CohortSplit&,
                                 const TrainConfig&);
  friend TrainResult fine_tune(const ModelParams&, const InstitutionSilo&,
                               const CohortSplit&, const TrainConfig&);
  friend TrainResult train_sequential_ewc(const TransferArtifact&,
                                          const InstitutionSilo&,
                                          const CohortSplit&,
                                          const TrainConfig&);
  friend Gradients compute_fisher_diagonal(const ModelParams&,
                                           const InstitutionSilo&,
                                           const CohortSplit&, std::size_t,
                                           std::uint64_t);
  friend MetricReport evaluate_on_silo(const ModelParams&,
                                       const InstitutionSilo&,
                                       const CohortSplit&, const EvalConfig&);
  // Each silo exporting its own data store to its own file.
  friend void write_universe(const std::vector<InstitutionSilo>&, const Schema&,
                             const std::string&);
};

// An institution's private dataset plus its public contextual profile.
// Records never cross this boundary: the public surface exposes aggregates,
// label-free feature matrices, and nothing record-shaped.
class InstitutionSilo {
 public:
  InstitutionSilo(std::string id, SiloKind kind,
                  std::vector<StudentRecord> records,
                  ContextualProfile context, Schema schema);

  const std::string& id() const { return id_; }
  SiloKind kind() const { return kind_; }
  const ContextualProfile& context() const { return context_; }
  const Schema& schema() const { return schema_; }
  std::size_t record_count() const { return records_.size(); }

  // -- aggregate queries ----------------------------------------------------
  std::size_t cohort_count(int year) const;
  // Fraction retained among the split's train-year records.
  double historical_retention_rate(const CohortSplit& split) const;
  // Same, per intersectional group (groups with no train-year records absent).
  std::map<GroupKey, double> historical_group_rates(const CohortSplit& split) const;
  std::map<GroupKey, std::size_t> group_sizes(const CohortSplit& split,
                                              bool test_cohort) const;

  // -- label-free feature access (the SFDA surface) --------------------------
  // Encoded feature matrix for the test cohort. Carries no labels and no
  // sensitive attributes; this is the only record-level egress.
  Eigen::MatrixXd test_features(const CohortSplit& split) const;

  // Record view for silo-scoped operations only (passkey-guarded).
  const std::vector<StudentRecord>& records(SiloAccess) const { return records_; }

 private:
  std::string id_;
  SiloKind kind_;
  std::vector<StudentRecord> records_;
  ContextualProfile context_;
  Schema schema_;
};

// CSV ingestion. Student files: header = schema fields + cohort_year,
// gender, urm, retained. Context files: one row per institution, columns
// prefixed "<category>." .
std::vector<StudentRecord> load_students_csv(const std::string& path,
                                             const Schema& schema,
                                             const YearRange& years = {});
std::map<std::string, ContextualProfile> load_context_csv(const std::string& path);

void write_students_csv(const std::string& path, const Schema& schema,
                        const std::vector<StudentRecord>& records);
void write_context_csv(const std::string& path,
                       const std::vector<const InstitutionSilo*>& silos);

}  // namespace silobench
