#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "silobench/data_model.hpp"
#include "silobench/errors.hpp"
#include "test_helpers.hpp"

using namespace silobench;
using test_helpers::tiny_schema;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& content) {
    path = (std::filesystem::temp_directory_path() /
            ("silobench_test_" + std::to_string(counter++) + ".csv"))
               .string();
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
  static inline int counter = 0;
};

constexpr const char* kHeader = "x0,x1,plan,cohort_year,gender,urm,retained\n";

}  // namespace

TEST_CASE("schema: encoded dimension and one-hot encoding") {
  const Schema s = tiny_schema();
  CHECK(s.encoded_dim() == 4);  // 2 numeric + 2-level categorical
  const Eigen::MatrixXd x = s.encode({{1.5, -2.0, 1.0}});
  CHECK(x(0, 0) == 1.5);
  CHECK(x(0, 1) == -2.0);
  CHECK(x(0, 2) == 0.0);
  CHECK(x(0, 3) == 1.0);
  CHECK_THROWS_AS((void)s.encode({{1.0, 2.0}}), ValidationError);
}

TEST_CASE("schema: JSON round trip") {
  const Schema s = tiny_schema();
  const Schema back = Schema::from_json(s.to_json());
  CHECK(back.size() == s.size());
  CHECK(back.encoded_dim() == s.encoded_dim());
  CHECK(back.fields()[2].levels == s.fields()[2].levels);
}

TEST_CASE("load_students_csv: valid rows produce one record each") {
  TempFile f(std::string(kHeader) +
             "1.0,2.0,a,2015,female,1,1\n"
             "0.5,-1.0,b,2019,male,0,0\n"
             ",3.0,a,2016,other,0,1\n");  // missing x0 -> NaN
  const auto records = load_students_csv(f.path, tiny_schema());
  REQUIRE(records.size() == 3);
  CHECK(records[0].cohort_year == 2015);
  CHECK(records[0].gender == Gender::female);
  CHECK(records[0].urm);
  CHECK(records[0].retained);
  CHECK(records[1].features[2] == 1.0);  // level "b"
  CHECK(std::isnan(records[2].features[0]));
}

TEST_CASE("load_students_csv: schema and parse errors") {
  SUBCASE("label column absent") {
    TempFile f("x0,x1,plan,cohort_year,gender,urm\n1,2,a,2015,female,0\n");
    CHECK_THROWS_AS((void)load_students_csv(f.path, tiny_schema()), SchemaError);
  }
  SUBCASE("malformed numeric names the row") {
    TempFile f(std::string(kHeader) + "1.0,2.0,a,2015,female,1,1\n"
                                      "oops,2.0,a,2015,female,1,1\n");
    try {
      (void)load_students_csv(f.path, tiny_schema());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    }
  }
  SUBCASE("unknown categorical level") {
    TempFile f(std::string(kHeader) + "1.0,2.0,zzz,2015,female,1,1\n");
    CHECK_THROWS_AS((void)load_students_csv(f.path, tiny_schema()), SchemaError);
  }
  SUBCASE("missing label is rejected") {
    TempFile f(std::string(kHeader) + "1.0,2.0,a,2015,female,1,\n");
    CHECK_THROWS_AS((void)load_students_csv(f.path, tiny_schema()), ParseError);
  }
  SUBCASE("cohort year outside the configured range") {
    TempFile f(std::string(kHeader) + "1.0,2.0,a,2025,female,1,1\n");
    CHECK_THROWS_AS((void)load_students_csv(f.path, tiny_schema()),
                    ValidationError);
  }
}

TEST_CASE("split_cohorts") {
  std::vector<StudentRecord> records;
  for (int year : {2012, 2015, 2019}) {
    StudentRecord r;
    r.cohort_year = year;
    r.features = {0.0, 0.0, 0.0};
    records.push_back(r);
  }
  SUBCASE("default split: one dropped, one train, one test") {
    const SplitResult s = split_cohorts(records, {});
    CHECK(s.train == std::vector<std::size_t>{1});
    CHECK(s.test == std::vector<std::size_t>{2});
    CHECK(s.dropped == 1);
  }
  SUBCASE("test partition only contains the test year") {
    std::vector<StudentRecord> all;
    for (int y = 2013; y <= 2019; ++y) {
      StudentRecord r;
      r.cohort_year = y;
      all.push_back(r);
    }
    const SplitResult s = split_cohorts(all, {});
    REQUIRE(s.test.size() == 1);
    CHECK(all[s.test[0]].cohort_year == 2019);
    CHECK(s.train.size() == 6);
  }
  SUBCASE("degenerate splits raise") {
    std::vector<StudentRecord> only2019(3);
    for (auto& r : only2019) r.cohort_year = 2019;
    CHECK_THROWS_AS((void)split_cohorts(only2019, {}), DegenerateSplitError);
    std::vector<StudentRecord> only2015(3);
    for (auto& r : only2015) r.cohort_year = 2015;
    CHECK_THROWS_AS((void)split_cohorts(only2015, {}), DegenerateSplitError);
  }
  SUBCASE("overlapping split config is rejected") {
    CohortSplit bad;
    bad.train_years = {2018, 2019};
    bad.test_year = 2019;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("partition_groups") {
  std::vector<StudentRecord> records;
  auto add = [&records](Gender g, bool urm, int count) {
    for (int i = 0; i < count; ++i) {
      StudentRecord r;
      r.gender = g;
      r.urm = urm;
      records.push_back(r);
    }
  };
  SUBCASE("2 genders x 2 urm -> 4 groups; bijection") {
    add(Gender::female, true, 25);
    add(Gender::female, false, 30);
    add(Gender::male, true, 20);
    add(Gender::male, false, 40);
    const GroupPartition p = partition_groups(records);
    CHECK(p.indices.size() == 4);
    std::size_t total = 0;
    std::set<std::size_t> seen;
    for (const auto& [g, idx] : p.indices) {
      total += idx.size();
      seen.insert(idx.begin(), idx.end());
    }
    CHECK(total == records.size());
    CHECK(seen.size() == records.size());
    CHECK(p.below_floor.empty());
  }
  SUBCASE("all records in one group") {
    add(Gender::female, true, 30);
    CHECK(partition_groups(records).indices.size() == 1);
  }
  SUBCASE("small group flagged below the floor") {
    add(Gender::female, true, 5);
    add(Gender::male, false, 25);
    const GroupPartition p = partition_groups(records, 20);
    CHECK(p.below_floor.count({Gender::female, true}) == 1);
    CHECK(p.eligible().size() == 1);
  }
}

TEST_CASE("silo: aggregates and label-free feature access") {
  const InstitutionSilo silo = test_helpers::separable_silo("T01", 140, 5);
  const CohortSplit split;
  CHECK(silo.record_count() == 140);
  const double rate = silo.historical_retention_rate(split);
  CHECK(rate > 0.2);
  CHECK(rate < 0.8);
  const auto group_rates = silo.historical_group_rates(split);
  CHECK(!group_rates.empty());
  const Eigen::MatrixXd x = silo.test_features(split);
  CHECK(x.cols() == 4);  // encoded, not raw
  CHECK(x.rows() == static_cast<Eigen::Index>(silo.cohort_count(2019)));
}

TEST_CASE("silo: imputation fills missing cells inside the silo") {
  std::vector<StudentRecord> records;
  for (int i = 0; i < 10; ++i) {
    StudentRecord r;
    r.cohort_year = i < 8 ? 2015 : 2019;
    r.features = {static_cast<double>(i), 1.0, 0.0};
    records.push_back(r);
  }
  records[3].features[0] = std::nan("");
  records[5].features[2] = std::nan("");
  ContextualProfile profile;
  for (ContextCategory c : all_context_categories()) {
    profile.category(c).push_back({FieldKind::numeric, 0.0, "", false});
  }
  const InstitutionSilo silo("I", SiloKind::community_college, records, profile,
                             tiny_schema());
  // Encoding would throw on NaN; a clean encode proves imputation ran.
  CHECK_NOTHROW((void)silo.test_features({}));
}

TEST_CASE("context CSV round trip") {
  const InstitutionSilo a = test_helpers::separable_silo("A01", 60, 1);
  const InstitutionSilo b = test_helpers::separable_silo("B01", 60, 2);
  const std::string path =
      (std::filesystem::temp_directory_path() / "silobench_ctx.csv").string();
  write_context_csv(path, {&a, &b});
  const auto profiles = load_context_csv(path);
  CHECK(profiles.size() == 2);
  CHECK(profiles.count("A01") == 1);
  for (ContextCategory c : all_context_categories()) {
    CHECK(profiles.at("A01").category(c).size() == 1);
  }
  std::remove(path.c_str());
}

TEST_CASE("students CSV round trip preserves records") {
  const InstitutionSilo silo = test_helpers::separable_silo("R01", 30, 9);
  const std::string path =
      (std::filesystem::temp_directory_path() / "silobench_students.csv").string();
  // Export via the universe writer path happens in orchestrator tests; here
  // exercise the writer on standalone records.
  std::vector<StudentRecord> records;
  for (int i = 0; i < 5; ++i) {
    StudentRecord r;
    r.cohort_year = 2013 + i;
    r.features = {0.5 * i, -1.0, static_cast<double>(i % 2)};
    r.gender = i % 2 ? Gender::male : Gender::female;
    r.urm = i % 3 == 0;
    r.retained = i % 2 == 0;
    records.push_back(r);
  }
  write_students_csv(path, tiny_schema(), records);
  const auto back = load_students_csv(path, tiny_schema());
  REQUIRE(back.size() == records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].cohort_year == records[i].cohort_year);
    CHECK(back[i].features == records[i].features);
    CHECK(back[i].gender == records[i].gender);
    CHECK(back[i].urm == records[i].urm);
    CHECK(back[i].retained == records[i].retained);
  }
  std::remove(path.c_str());
}
