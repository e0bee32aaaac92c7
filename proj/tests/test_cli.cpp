#include "confgap/cli.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_support.hpp"

using namespace confgap;
using testing_support::TempDir;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "confgap");
  std::vector<const char *> argv;
  for (const auto &a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_text(const fs::path &p, const std::string &s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

// x0 = cos(s), x1 = -sin(s): x0' = x1, x1' = -x0.
void write_harmonic(const fs::path &p) {
  Matrix states(400, 2);
  for (int i = 0; i < 400; ++i) {
    const double s = 0.01 * i;
    states(i, 0) = std::cos(s);
    states(i, 1) = -std::sin(s);
  }
  write_trajectory_csv(p, states, 0.01);
}

double column_mean(const FeatureMatrix &f, const std::string &name) {
  const auto it = std::find(f.columns().begin(), f.columns().end(), name);
  if (it == f.columns().end()) return std::nan("");
  return f.rows().col(it - f.columns().begin()).mean();
}

class EnvGuard {
 public:
  EnvGuard(const char *name, const char *value) : name_(name) {
    if (const char *old = std::getenv(name)) old_ = old;
    setenv(name, value, 1);
  }
  ~EnvGuard() {
    if (old_) setenv(name_, old_->c_str(), 1);
    else unsetenv(name_);
  }

 private:
  const char *name_;
  std::optional<std::string> old_;
};

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run_cli({"--help"}).code, cli::kExitOk);
  EXPECT_EQ(run_cli({}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"bogus"}).code, cli::kExitUsage);
  EXPECT_EQ(run_cli({"calibrate", "--features", "x.csv"}).code, cli::kExitUsage);
}

TEST(Cli, ExtractRecoversHarmonicCoupling) {
  TempDir dir;
  write_harmonic(dir / "h.csv");
  // A single orbit lies on x0^2 + x1^2 = const, which makes any library with
  // a constant and quadratic terms rank-deficient; use the linear library.
  const auto r = run_cli({"extract", "--input", (dir / "h.csv").string(), "--out", (dir / "f.json").string(),
                          "--degree", "1", "--no-trig", "--no-constant"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto f = load_features(dir / "f.json");
  EXPECT_EQ(f.n_rows(), 1);
  EXPECT_NEAR(column_mean(f, "x0::x1"), 1.0, 0.05);
  EXPECT_NEAR(column_mean(f, "x1::x0"), -1.0, 0.05);
  const auto env = load(dir / "f.json", ArtifactKind::Features);
  EXPECT_EQ(env.payload["config"]["library"]["poly_max_degree"], 1);
  EXPECT_EQ(f.n_cols(), 4);
}

TEST(Cli, MissingInputIsUsageError) {
  TempDir dir;
  const auto r = run_cli({"extract", "--input", (dir / "none.csv").string(), "--out", (dir / "f.json").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  fs::create_directories(dir / "empty");
  EXPECT_EQ(run_cli({"extract", "--input", (dir / "empty").string(), "--out", (dir / "f.json").string()}).code,
            cli::kExitUsage);
}

TEST(Cli, CalibrateScoreAndReRunAreByteIdentical) {
  TempDir dir;
  EnvGuard epoch("SOURCE_DATE_EPOCH", "1700000000");
  write_feature_csv(dir / "src.csv", testing_support::features(testing_support::gaussian_rows(100, 3, 1)));
  write_feature_csv(dir / "tgt.csv", testing_support::features(testing_support::gaussian_rows(50, 3, 2), "t"));
  for (const char *name : {"a.json", "b.json"}) {
    const auto r = run_cli({"calibrate", "--features", (dir / "src.csv").string(), "--out", (dir / name).string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("k_index="), std::string::npos);
  }
  EXPECT_EQ(detail::read_file(dir / "a.json"), detail::read_file(dir / "b.json"));

  const auto s = run_cli({"sdcd", "--target", (dir / "tgt.csv").string(), "--source", (dir / "src.csv").string(),
                          "--calibration", (dir / "a.json").string(), "--report", (dir / "r.json").string()});
  ASSERT_EQ(s.code, 0) << s.err;
  const auto report = sdcd_report_from_json(load(dir / "r.json", ArtifactKind::SdcdReport).payload);
  EXPECT_EQ(report.residuals.size(), 50u);
  EXPECT_GE(report.sdcd_percent, 80.0);
}

TEST(Cli, SeedPrecedence) {
  TempDir dir;
  write_feature_csv(dir / "src.csv", testing_support::features(testing_support::gaussian_rows(40, 2, 1)));
  write_text(dir / "cfg.json", "{\"split_seed\": 5}");
  auto seed_of = [&](std::vector<std::string> extra) {
    std::vector<std::string> args{"calibrate", "--features", (dir / "src.csv").string(), "--out",
                                  (dir / "c.json").string()};
    args.insert(args.end(), extra.begin(), extra.end());
    const auto r = run_cli(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return load(dir / "c.json").payload["split_seed"].get<std::uint64_t>();
  };
  EXPECT_EQ(seed_of({}), 0u);
  EXPECT_EQ(seed_of({"--config", (dir / "cfg.json").string()}), 5u);
  {
    EnvGuard env("CONFGAP_SEED", "7");
    EXPECT_EQ(seed_of({"--config", (dir / "cfg.json").string()}), 7u);
    EXPECT_EQ(seed_of({"--config", (dir / "cfg.json").string(), "--seed", "9"}), 9u);
  }
}

TEST(Cli, InvalidConfigIsUsageError) {
  TempDir dir;
  write_feature_csv(dir / "src.csv", testing_support::features(testing_support::gaussian_rows(40, 2, 1)));
  const std::string f = (dir / "src.csv").string();
  const std::string o = (dir / "c.json").string();
  EXPECT_EQ(run_cli({"calibrate", "--features", f, "--out", o, "--alpha", "1.5"}).code, cli::kExitUsage);
  write_text(dir / "cfg.json", "{\"alpah\": 0.1}");
  const auto r = run_cli({"calibrate", "--features", f, "--out", o, "--config", (dir / "cfg.json").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("alpah"), std::string::npos);
}

TEST(Cli, ColumnMismatchIsUsageError) {
  TempDir dir;
  write_feature_csv(dir / "src.csv", testing_support::features(testing_support::gaussian_rows(40, 3, 1)));
  write_feature_csv(dir / "tgt.csv", testing_support::features(testing_support::gaussian_rows(10, 2, 2)));
  ASSERT_EQ(run_cli({"calibrate", "--features", (dir / "src.csv").string(), "--out", (dir / "c.json").string()}).code, 0);
  const auto r = run_cli({"sdcd", "--target", (dir / "tgt.csv").string(), "--source", (dir / "src.csv").string(),
                          "--calibration", (dir / "c.json").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("f2"), std::string::npos);
}

TEST(Cli, MalformedScenarioSpec) {
  TempDir dir;
  write_text(dir / "bad.json", "{\"base_dynamics\": \"linear_decay\", \"shift\": 1}");
  EXPECT_EQ(run_cli({"simulate", "--spec", (dir / "bad.json").string()}).code, cli::kExitUsage);
  write_text(dir / "worse.json", "[1, 2");
  EXPECT_EQ(run_cli({"simulate", "--spec", (dir / "worse.json").string()}).code, cli::kExitUsage);
  write_text(dir / "dyn.json", "{\"base_dynamics\": \"lorenz\"}");
  EXPECT_EQ(run_cli({"simulate", "--spec", (dir / "dyn.json").string()}).code, cli::kExitUsage);
}

TEST(Cli, SimulateWritesDomainsAndSummary) {
  TempDir dir;
  write_text(dir / "spec.json",
             "{\"base_dynamics\": \"linear_decay\", \"n_samples_per_domain\": 40, \"shift_level\": 1.0,"
             " \"knowledge_signal\": \"gap_closing\", \"seed\": 3}");
  const auto r = run_cli({"simulate", "--spec", (dir / "spec.json").string(), "--out-dir", (dir / "d").string(),
                          "--out", (dir / "s.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("accuracy"), std::string::npos);
  const Domain src = load_domain_dir(dir / "d" / "source", DomainKind::Source);
  EXPECT_EQ(src.samples.size(), 40u);
  EXPECT_EQ(src.knowledge_columns.size(), 14u);
  EXPECT_TRUE(fs::exists(dir / "s.json"));
}

TEST(Cli, RefineFindsShiftedColumn) {
  TempDir dir;
  const Matrix s = testing_support::gaussian_rows(150, 3, 1);
  Matrix t = testing_support::gaussian_rows(150, 3, 2);
  t.col(1).array() += 6.0;
  write_feature_csv(dir / "s.csv", testing_support::features(s));
  write_feature_csv(dir / "t.csv", testing_support::features(t, "t"));
  write_text(dir / "pairs.json", "[{\"source\": \"s.csv\", \"target\": \"t.csv\", \"name\": \"p\"}]");
  const auto r = run_cli({"refine", "--pairs", (dir / "pairs.json").string(), "--removable", "f0,f1,f2", "--out",
                          (dir / "trace.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto trace = ablation_trace_from_json(load(dir / "trace.json", ArtifactKind::AblationTrace).payload);
  ASSERT_FALSE(trace.best_removed.empty());
  EXPECT_EQ(trace.best_removed.front(), "f1");
  EXPECT_GT(trace.best_avg_sdcd, trace.steps.front().avg_sdcd + 30.0);
}

TEST(Cli, CoverageReport) {
  TempDir dir;
  write_feature_csv(dir / "f.csv", testing_support::features(testing_support::gaussian_rows(300, 2, 1)));
  const auto r = run_cli({"coverage", "--features", (dir / "f.csv").string(), "--trials", "10"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("coverage"), std::string::npos);
}
