#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <locale>
#include <random>
#include <sstream>

#include "srmcomm/study.hpp"
#include "test_support.hpp"

using namespace srmcomm;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigDir = SRMCOMM_CONFIG_DIR;

StudyConfig tiny_config() { return load_config(kConfigDir / "tiny.json"); }

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("srmcomm_study_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
  const StudyConfig c = parse_config(Json::object());
  EXPECT_EQ(c.model_preset, "sim-rbf-90");
  EXPECT_EQ(c.kernel.basis_count, 50);
  EXPECT_DOUBLE_EQ(c.kernel.length_scale, 0.3);
  EXPECT_EQ(c.kernel.smoothness, 3);
  EXPECT_EQ(c.kernel.error_grid_points, 100);
  EXPECT_DOUBLE_EQ(c.simulation.sample_rate_hz, 5000.0);
  EXPECT_DOUBLE_EQ(c.simulation.bandwidth_hz, 20.0);
  EXPECT_DOUBLE_EQ(c.simulation.reference_velocity_teeth_per_s, 0.3);
  EXPECT_DOUBLE_EQ(c.simulation.teeth_span, 5.0);
  EXPECT_EQ(c.monte_carlo.srm_count, 20);
  EXPECT_EQ(c.monte_carlo.full_scale_srm_count, 100);
}

TEST(Config, ShippedConfigsParse) {
  const StudyConfig d = load_config(kConfigDir / "default.json");
  EXPECT_EQ(d.model_preset, "sim-rbf-90");
  EXPECT_EQ(d.monte_carlo.master_seed, 20240101u);
  const StudyConfig t = tiny_config();
  EXPECT_EQ(t.model_preset, "sine-3coil");
  EXPECT_EQ(t.monte_carlo.lambdas, (std::vector<double>{0.0, 1.0}));
}

TEST(Config, UnknownKeysRejected) {
  EXPECT_THROW(parse_config(Json::parse(R"({"kernal": {}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"kernel": {"basis_cnt": 4}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"simulation": {"velocity": 1}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"model": {"preset": "sine-3coil", "x": 1}})")),
               ConfigError);
}

TEST(Config, WrongTypesRejected) {
  EXPECT_THROW(parse_config(Json::parse(R"({"kernel": {"basis_count": 4.5}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"kernel": {"length_scale": "0.3"}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"monte_carlo": {"master_seed": -5}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"monte_carlo": {"lambdas": 1.0}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"qp": {"polish": 1}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"kernel": {"basis_count": 4294967296}})")),
               ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"([1, 2])")), ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(parse_config(Json::parse(R"({"monte_carlo": {"lambdas": [1, -0.1]}})")),
               ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"monte_carlo": {"lambdas": []}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"monte_carlo": {"srm_count": 0}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"kernel": {"error_grid_points": 10}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"simulation": {"teeth_span": 1}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"simulation": {"sample_rate_hz": 30}})")),
               ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"simulation": {"hold_duration_s": -1}})")),
               ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"tsf": {"overlap_fraction": 0}})")), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"model": {}})")), ConfigError);
  EXPECT_THROW(
      parse_config(Json::parse(R"({"model": {"preset": "sine-3coil", "file": "m.json"}})")),
      ConfigError);
  StudyConfig bad_preset = parse_config(Json::parse(R"({"model": {"preset": "nope"}})"));
  EXPECT_THROW(load_model(bad_preset), ConfigError);
}

TEST(Config, MissingFilesRejected) {
  EXPECT_THROW(load_config(kConfigDir / "does_not_exist.json"), ConfigError);
  EXPECT_THROW(parse_config(Json::parse(R"({"model": {"file": "no_such_model.json"}})"),
                            fs::temp_directory_path()),
               ConfigError);
  const fs::path dir = scratch_dir("badjson");
  std::ofstream(dir / "broken.json") << "{ \"kernel\": ";
  EXPECT_THROW(load_config(dir / "broken.json"), ConfigError);
}

TEST(Config, ModelFileResolvesRelativeToConfig) {
  const fs::path dir = scratch_dir("modelfile");
  const ProbabilisticSrmModel m = make_nominal_model("sine-3coil");
  write_json_file(dir / "motor.json", to_json(m));
  std::ofstream(dir / "cfg.json") << R"({"model": {"file": "motor.json"}})";
  const StudyConfig c = load_config(dir / "cfg.json");
  ASSERT_TRUE(c.model_file.has_value());
  const ProbabilisticSrmModel loaded = load_model(c);
  EXPECT_EQ(loaded.theta_mean(), m.theta_mean());
  EXPECT_EQ(loaded.theta_cov(), m.theta_cov());
}

TEST(BoxStats, TypeSevenQuantiles) {
  // Reference values from the linear-interpolation (type 7) definition.
  const BoxStats a = box_stats({4.0, 1.0, 3.0, 2.0});
  EXPECT_DOUBLE_EQ(a.min, 1.0);
  EXPECT_DOUBLE_EQ(a.q1, 1.75);
  EXPECT_DOUBLE_EQ(a.median, 2.5);
  EXPECT_DOUBLE_EQ(a.q3, 3.25);
  EXPECT_DOUBLE_EQ(a.max, 4.0);
  EXPECT_EQ(a.count, 4);
  const BoxStats b = box_stats({7.0, 1.0, 3.0, 9.0, 5.0});
  EXPECT_DOUBLE_EQ(b.q1, 3.0);
  EXPECT_DOUBLE_EQ(b.median, 5.0);
  EXPECT_DOUBLE_EQ(b.q3, 7.0);
  const BoxStats c = box_stats({2.5});
  EXPECT_DOUBLE_EQ(c.min, 2.5);
  EXPECT_DOUBLE_EQ(c.median, 2.5);
  EXPECT_DOUBLE_EQ(c.max, 2.5);
  EXPECT_THROW(quantile_sorted({}, 0.5), std::invalid_argument);
}

TEST(Summary, ImprovementFromRawRecordsAndAbortsCounted) {
  std::vector<RunRecord> recs;
  auto add = [&](Method m, double e, bool aborted = false) {
    RunRecord r;
    r.lambda = 1.0;
    r.method = m;
    r.e_rms = e;
    r.aborted = aborted;
    recs.push_back(r);
  };
  add(Method::Robust, 1.0);
  add(Method::Robust, 3.0);
  add(Method::Robust, 2.0);
  add(Method::Robust, 100.0, true);
  add(Method::Conventional, 4.0);
  add(Method::Conventional, 5.0);
  add(Method::Conventional, 6.0);
  RunRecord other;
  other.lambda = 0.5;
  other.e_rms = 1e9;
  recs.push_back(other);
  const LambdaSummary s = summarize(1.0, recs);
  EXPECT_EQ(s.robust.count, 3);
  EXPECT_EQ(s.robust_aborted, 1);
  EXPECT_EQ(s.conventional_aborted, 0);
  EXPECT_DOUBLE_EQ(s.robust.median, 2.0);
  EXPECT_DOUBLE_EQ(s.conventional.median, 5.0);
  EXPECT_DOUBLE_EQ(s.improvement, 1.0 - 2.0 / 5.0);
}

TEST(Csv, QuotingAndNumberFormat) {
  EXPECT_EQ(csv_escape("plain"), "plain");
  EXPECT_EQ(csv_escape("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_escape("two\nlines"), "\"two\nlines\"");
  EXPECT_EQ(format_number(0.5), "0.5");
  EXPECT_EQ(format_number(-3.0), "-3");
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1e-6);
  for (int i = 0; i < 1000; ++i) {
    const double v = n(rng);
    EXPECT_EQ(std::stod(format_number(v)), v);
  }
  std::ostringstream os;
  {
    CsvWriter w(os, {"name", "value"});
    w.row() << std::string("x,y") << 1.25;
  }
  EXPECT_EQ(os.str(), "name,value\r\n\"x,y\",1.25\r\n");
  EXPECT_THROW(
      {
        CsvWriter w(os, {"a", "b"});
        w.row() << 1.0;
      },
      std::logic_error);
}

TEST(Csv, DecimalPointIndependentOfGlobalLocale) {
  struct CommaDecimal : std::numpunct<char> {
    char do_decimal_point() const override { return ','; }
    char do_thousands_sep() const override { return '.'; }
    std::string do_grouping() const override { return "\3"; }
  };
  const std::locale previous =
      std::locale::global(std::locale(std::locale::classic(), new CommaDecimal));
  const std::string s = format_number(1234.5);
  std::ostringstream os;
  QpIterate it;
  it.objective = 0.5;
  write_iteration_log_csv(os, {it});
  std::locale::global(previous);
  EXPECT_EQ(s, "1234.5");
  EXPECT_NE(os.str().find(",0.5,"), std::string::npos);
}

TEST(ParallelFor, VisitsEveryIndexOnceAndPropagatesErrors) {
  std::vector<std::atomic<int>> hits(50);
  parallel_for(50, 4, [&](int i) { hits[static_cast<std::size_t>(i)]++; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(20, 3,
                            [](int i) {
                              if (i == 7) throw SolverError("boom");
                            }),
               SolverError);
}

TEST(Design, TinySingleCoilProblemIsFastAndOptimal) {
  const ProbabilisticSrmModel m = srmcomm::testing::small_fourier_model();
  const KernelBasisSpec f = KernelBasisSpec::evenly_spaced(2, 0.3, 3, 131, 1);
  const auto t0 = std::chrono::steady_clock::now();
  const DesignOutcome d = run_design(m, f, 4, 1.0, QpSettings{});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(secs, 1.0);
  EXPECT_EQ(d.solution.status, QpStatus::Optimal);
  EXPECT_EQ(d.qp.variable_count(), 4);
  EXPECT_EQ(d.qp.constraint_count(), 8);
  const std::string first = to_json(d.params).dump(2);
  const std::string second = to_json(run_design(m, f, 4, 1.0, QpSettings{}).params).dump(2);
  EXPECT_EQ(first, second);
}

TEST(Design, DefaultConfigHasFullDesignScale) {
  const StudyConfig cfg = load_config(kConfigDir / "default.json");
  const ProbabilisticSrmModel m = load_model(cfg);
  const DesignOutcome d = run_design(cfg, m, cfg.design_variance_scale);
  EXPECT_EQ(d.qp.variable_count(), 300);
  EXPECT_EQ(d.qp.constraint_count(), 600);
  EXPECT_EQ(d.solution.status, QpStatus::Optimal);
  EXPECT_LE(d.nominal_profile.max_deviation(), 0.1);
  const Json report = design_report_json(d);
  EXPECT_EQ(report["status"], to_string(QpStatus::Optimal));
  EXPECT_EQ(report["variable_count"], 300);
}

TEST(Design, ExpectedCostNondecreasingInLambda) {
  const StudyConfig cfg = tiny_config();
  const ProbabilisticSrmModel m = load_model(cfg);
  double prev = -1.0;
  for (double lambda : {0.0, 0.1, 0.5, 1.0, 2.0}) {
    const DesignOutcome d = run_design(cfg, m, lambda);
    ASSERT_EQ(d.solution.status, QpStatus::Optimal);
    EXPECT_GE(d.expected_cost, prev - 1e-9 * std::abs(prev)) << lambda;
    prev = d.expected_cost;
  }
}

TEST(Design, SolverFailureRaised) {
  StudyConfig cfg = tiny_config();
  cfg.qp.max_iterations = 1;
  cfg.qp.polish = false;
  const ProbabilisticSrmModel m = load_model(cfg);
  EXPECT_THROW(run_design(cfg, m, 1.0), SolverError);
}

class TinyStudy : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = new StudyConfig(tiny_config());
    model_ = new ProbabilisticSrmModel(load_model(*cfg_));
    result_ = new StudyResult(run_study(*cfg_, *model_, cfg_->monte_carlo.lambdas, 3));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete model_;
    delete cfg_;
  }
  static StudyConfig* cfg_;
  static ProbabilisticSrmModel* model_;
  static StudyResult* result_;
};

StudyConfig* TinyStudy::cfg_ = nullptr;
ProbabilisticSrmModel* TinyStudy::model_ = nullptr;
StudyResult* TinyStudy::result_ = nullptr;

TEST_F(TinyStudy, RecordLayout) {
  ASSERT_EQ(result_->records.size(), 2u * 3u * 2u);
  for (std::size_t k = 0; k < result_->records.size(); ++k) {
    const RunRecord& r = result_->records[k];
    EXPECT_EQ(r.method, k % 2 == 0 ? Method::Robust : Method::Conventional);
    EXPECT_EQ(r.srm_index, static_cast<int>((k / 2) % 3));
    EXPECT_EQ(r.seed, derive_seed(7, static_cast<std::uint64_t>(r.srm_index)));
    EXPECT_FALSE(r.aborted);
    EXPECT_EQ(r.e_rms, combine_e_rms(r.e_rms_plus, r.e_rms_minus));
  }
  ASSERT_EQ(result_->summaries.size(), 2u);
}

TEST_F(TinyStudy, ZeroLambdaGivesIdenticalMotors) {
  const auto& recs = result_->records;
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_EQ(recs[k].lambda, 0.0);
    EXPECT_EQ(recs[k].e_rms, recs[k % 2].e_rms);
  }
  const LambdaSummary& s = result_->summaries[0];
  EXPECT_EQ(s.robust.min, s.robust.max);
  EXPECT_EQ(s.conventional.min, s.conventional.max);
}

TEST_F(TinyStudy, PerturbedMotorsDiffer) {
  const auto& recs = result_->records;
  EXPECT_NE(recs[6].e_rms, recs[8].e_rms);
  EXPECT_NE(recs[7].e_rms, recs[9].e_rms);
}

TEST_F(TinyStudy, MoreMotorsKeepEarlierResults) {
  StudyConfig c = *cfg_;
  c.monte_carlo.threads = 3;  // also exercises order independence
  const StudyResult more = run_study(c, *model_, c.monte_carlo.lambdas, 6);
  for (int li = 0; li < 2; ++li) {
    for (int i = 0; i < 3; ++i) {
      for (int m = 0; m < 2; ++m) {
        const RunRecord& a = result_->records[static_cast<std::size_t>((li * 3 + i) * 2 + m)];
        const RunRecord& b = more.records[static_cast<std::size_t>((li * 6 + i) * 2 + m)];
        EXPECT_EQ(a.seed, b.seed);
        EXPECT_EQ(a.e_rms, b.e_rms);
        EXPECT_EQ(a.e_rms_plus, b.e_rms_plus);
      }
    }
  }
}

TEST_F(TinyStudy, RerunIsByteIdentical) {
  const StudyResult again = run_study(*cfg_, *model_, cfg_->monte_carlo.lambdas, 3);
  EXPECT_EQ(summary_json(again).dump(2), summary_json(*result_).dump(2));
  std::ostringstream a, b;
  write_runs_csv(a, again);
  write_runs_csv(b, *result_);
  EXPECT_EQ(a.str(), b.str());
}

TEST_F(TinyStudy, RawCsvReproducesSummary) {
  std::ostringstream os;
  write_runs_csv(os, *result_);
  const auto rows = parse_csv(os.str());
  ASSERT_EQ(rows.front(), (std::vector<std::string>{"lambda", "srm_index", "seed", "method",
                                                     "e_rms_plus_rad", "e_rms_minus_rad",
                                                     "e_rms_rad", "aborted"}));
  std::vector<RunRecord> parsed;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    RunRecord r;
    r.lambda = std::stod(rows[k][0]);
    r.method = rows[k][3] == "robust" ? Method::Robust : Method::Conventional;
    r.e_rms = std::stod(rows[k][6]);
    r.aborted = rows[k][7] == "true";
    parsed.push_back(r);
  }
  for (const LambdaSummary& s : result_->summaries) {
    const LambdaSummary t = summarize(s.lambda, parsed);
    EXPECT_EQ(to_json(t.robust), to_json(s.robust));
    EXPECT_EQ(to_json(t.conventional), to_json(s.conventional));
    EXPECT_EQ(t.improvement, s.improvement);
  }
  const Json j = summary_json(*result_);
  EXPECT_EQ(j["srm_count"], 3);
  EXPECT_EQ(j["master_seed"], 7);
  ASSERT_EQ(j["lambdas"].size(), 2u);
  EXPECT_EQ(j["lambdas"][1]["robust_e_rms_rad"]["count"], 3);
}

TEST(Ripple, RowCountsAndNominalProfiles) {
  const StudyConfig cfg = load_config(kConfigDir / "default.json");
  const ProbabilisticSrmModel m = load_model(cfg);
  const DesignOutcome d = run_design(cfg, m, 1.0);
  const int srms = 10;
  const RippleResult r = run_ripple(cfg, m, d.params, 1.0, srms);
  const int n = cfg.kernel.error_grid_points;
  EXPECT_EQ(r.rows.size(), static_cast<std::size_t>((srms + 1) * 2 * 2 * n));
  ASSERT_EQ(r.robust_max_deviation.size(), static_cast<std::size_t>(srms + 1));
  // Nominal motor: both methods close to +/-1.
  EXPECT_LE(r.robust_max_deviation[0], 0.1);
  EXPECT_LE(r.conventional_max_deviation[0], 0.1);
  for (const RippleRow& row : r.rows) {
    if (row.srm_index == -1) EXPECT_NEAR(row.b, row.sign, 0.1);
  }
  // Sampled motors: robust ripple no worse in the median.
  std::vector<double> rob(r.robust_max_deviation.begin() + 1, r.robust_max_deviation.end());
  std::vector<double> con(r.conventional_max_deviation.begin() + 1,
                          r.conventional_max_deviation.end());
  EXPECT_LE(box_stats(rob).median, box_stats(con).median);

  std::ostringstream os;
  write_ripple_csv(os, r);
  const auto rows = parse_csv(os.str());
  EXPECT_EQ(rows.size(), r.rows.size() + 1);
  EXPECT_EQ(rows.front(), (std::vector<std::string>{"srm_index", "method", "sign", "angle_rad", "b"}));
}
