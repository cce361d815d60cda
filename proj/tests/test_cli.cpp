#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "fixtures.hpp"
#include "mlfpca/model_io.hpp"
#include "mlfpca/simulate.hpp"

namespace mlfpca {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = 0;
  std::string out, err;
};

Result cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::vector<double>> numeric_rows(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::istringstream fields(line);
    std::string f;
    while (std::getline(fields, f, ',')) row.push_back(std::stod(f));
    rows.push_back(row);
  }
  return rows;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(testing::scratch_dir("cli"));
    const auto r = cli({"simulate", "-o", (*dir_ / "sim").string(), "--variables", "20",
                        "--replicates", "3", "--seed", "5"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path data() { return *dir_ / "sim" / "data.csv"; }
  static fs::path out(const std::string& name) { return *dir_ / name; }
  static fs::path* dir_;
};

fs::path* CliTest::dir_ = nullptr;

TEST_F(CliTest, SimulateWritesTruth) {
  const fs::path sim = out("sim");
  EXPECT_TRUE(fs::exists(sim / "data.csv"));
  EXPECT_TRUE(fs::exists(sim / "truth_curves.csv"));
  EXPECT_TRUE(fs::exists(sim / "manifest.conf"));
  const FittedModel truth = load_model(sim / "truth_model.json");
  EXPECT_EQ(truth.variable_ids.size(), 20u);
  EXPECT_EQ(load_csv(data()).num_variables(), 20u);
}

TEST_F(CliTest, SimulateIsReproducible) {
  const auto a = cli({"simulate", "-o", out("sim_a").string(), "--variables", "4", "--seed", "9"});
  const auto b = cli({"simulate", "-o", out("sim_b").string(), "--variables", "4", "--seed", "9"});
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(slurp(out("sim_a") / "data.csv"), slurp(out("sim_b") / "data.csv"));
}

TEST_F(CliTest, GaussianFitWritesContractFiles) {
  const fs::path o = out("fit_gaussian");
  const auto r = cli({"fit", data().string(), "-o", o.string(), "--model", "gaussian",
                      "--rank-variable", "2", "--rank-replicate", "1", "--basis", "bspline-cubic"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"model.json", "curves.csv", "trace.csv", "manifest.conf"}) {
    EXPECT_TRUE(fs::exists(o / f)) << f;
  }
  EXPECT_FALSE(fs::exists(o / "scree.csv"));
  const FittedModel m = load_model(o / "model.json");
  EXPECT_EQ(m.metadata.model, "gaussian");
  EXPECT_EQ(m.params.variable_rank(), 2);
  EXPECT_TRUE(m.metadata.log_likelihood.has_value());
  const auto curves = slurp(o / "curves.csv");
  EXPECT_EQ(curves.substr(0, curves.find('\n')), "variable,replicate,time,value");
  const auto trace = slurp(o / "trace.csv");
  EXPECT_EQ(trace.substr(0, trace.find('\n')), "iteration,loglik,delta");
}

TEST_F(CliTest, AutoRanksWriteScree) {
  const fs::path o = out("fit_auto");
  const auto r = cli({"fit", data().string(), "-o", o.string(), "--max-iterations", "100"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(o / "scree.csv"));
  EXPECT_GE(load_model(o / "model.json").params.variable_rank(), 1);
}

TEST_F(CliTest, SingleLevelAndStnFits) {
  const auto s = cli({"fit", data().string(), "-o", out("fit_single").string(), "--model",
                      "single-level", "--rank-variable", "0", "--rank-replicate", "1"});
  ASSERT_EQ(s.code, 0) << s.err;
  const auto doc = nlohmann::json::parse(slurp(out("fit_single") / "model.json"));
  EXPECT_EQ(doc["format"], "mlfpca-single-level");
  EXPECT_EQ(doc["variables"].size(), 20u);

  const auto t = cli({"fit", data().string(), "-o", out("fit_stn").string(), "--model", "stn",
                      "--rank-variable", "2", "--rank-replicate", "1", "--sweeps", "30",
                      "--burn-in", "10", "--mcem-iterations", "4", "--window", "2"});
  ASSERT_EQ(t.code, 0) << t.err;
  const FittedModel m = load_model(out("fit_stn") / "model.json");
  EXPECT_EQ(m.metadata.model, "stn");
  EXPECT_FALSE(m.params.is_gaussian());
  EXPECT_EQ(m.metadata.diagnostics.at("sweeps"), 30.0);
}

TEST_F(CliTest, PlotDataAddsScaledComponent) {
  const fs::path o = out("fit_plot");
  ASSERT_EQ(cli({"fit", data().string(), "-o", o.string(), "--rank-variable", "2",
                 "--rank-replicate", "1"})
                .code,
            0);
  const auto r = cli({"plot-data", (o / "model.json").string(), "--pc", "1", "--scale", "0.5"});
  ASSERT_EQ(r.code, 0) << r.err;
  const FittedModel m = load_model(o / "model.json");
  const SplineBasis basis = SplineBasis::from_spec(m.basis);
  const Eigen::VectorXd zeta = basis.grid_values(m.params.theta_alpha.col(0));
  const Eigen::VectorXd mu = basis.grid_values(m.params.theta_mu);
  const auto rows = numeric_rows(r.out);
  ASSERT_EQ(rows.size(), static_cast<std::size_t>(zeta.size()));
  for (std::size_t g = 0; g < rows.size(); ++g) {
    EXPECT_NEAR(rows[g][1], mu(static_cast<Eigen::Index>(g)), 1e-12);
    EXPECT_NEAR(rows[g][2] - rows[g][1], 0.5 * zeta(static_cast<Eigen::Index>(g)), 1e-12);
    EXPECT_NEAR(rows[g][1] - rows[g][3], 0.5 * zeta(static_cast<Eigen::Index>(g)), 1e-12);
  }
  const auto rep = cli({"plot-data", (o / "model.json").string(), "--level", "replicate",
                        "--variable", m.variable_ids[3]});
  EXPECT_EQ(rep.code, 0) << rep.err;
  EXPECT_EQ(cli({"plot-data", (o / "model.json").string(), "--pc", "3"}).code, 1);
  EXPECT_EQ(cli({"plot-data", (o / "model.json").string(), "--level", "replicate",
                 "--variable", "nope"})
                .code,
            1);
}

TEST_F(CliTest, EvaluateIdenticalCurvesIsZero) {
  const fs::path truth = out("sim") / "truth_curves.csv";
  const auto r = cli({"evaluate", truth.string(), truth.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "variable,mse");
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::stod(line.substr(line.find(',') + 1)), 0.0);
    ++rows;
  }
  EXPECT_EQ(rows, 20);
  const auto f = cli({"evaluate", truth.string(), truth.string(), "-o", out("eval.csv").string()});
  EXPECT_EQ(f.code, 0);
  EXPECT_NE(f.out.find("mean_mse=0"), std::string::npos) << f.out;
}

TEST_F(CliTest, EvaluateStudy) {
  const auto r = cli({"evaluate", "--study", "--variables", "5", "--replicates", "2",
                      "--repetitions", "1", "--max-iterations", "30"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "M,n,fitter,mean_mse,sd_mse,repetitions");
  EXPECT_NE(r.out.find("5,2,multi-level,"), std::string::npos);
  EXPECT_NE(r.out.find("5,2,single-level,"), std::string::npos);
}

TEST_F(CliTest, SelectRankWritesRanks) {
  const fs::path o = out("ranks");
  const auto r = cli({"select-rank", data().string(), "-o", o.string(), "--max-iterations", "100"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = nlohmann::json::parse(slurp(o / "ranks.json"));
  EXPECT_GE(doc["variable_rank"].get<int>(), 1);
  EXPECT_EQ(doc["replicate_ranks"].size(), 20u);
  EXPECT_TRUE(fs::exists(o / "scree.csv"));
}

TEST_F(CliTest, ValidationFailures) {
  EXPECT_EQ(cli({"fit", (out("none") / "x.csv").string(), "-o", out("bad").string()}).code, 1);
  EXPECT_EQ(cli({"fit", data().string(), "-o", out("bad").string(), "--rank-variable", "two"}).code, 1);
  EXPECT_EQ(cli({"fit", data().string(), "-o", out("bad").string(), "--model", "poisson"}).code, 1);
  EXPECT_EQ(cli({"fit", data().string()}).code, 1);
  EXPECT_EQ(cli({"frobnicate"}).code, 1);
  EXPECT_EQ(cli({}).code, 1);
  const fs::path dup = out("dup.csv");
  std::ofstream(dup) << "variable,replicate,time,value\nv,a,0,1\nv,a,0,2\nv,b,0,1\n";
  const auto r = cli({"fit", dup.string(), "-o", out("bad").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("duplicate"), std::string::npos) << r.err;
  const auto k = cli({"fit", data().string(), "-o", out("bad").string(), "--basis",
                      "bspline-cubic", "--knots", "1,3,5", "--rank-variable", "1",
                      "--rank-replicate", "1"});
  EXPECT_EQ(k.code, 1);
  EXPECT_NE(k.err.find("rank deficient"), std::string::npos) << k.err;
}

TEST_F(CliTest, HelpSucceeds) {
  const auto r = cli({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("select-rank"), std::string::npos);
  EXPECT_EQ(cli({"fit", "--help"}).code, 0);
}

int iterations_of(const fs::path& dir) {
  return load_model(dir / "model.json").metadata.iterations;
}

TEST_F(CliTest, FlagBeatsEnvironmentBeatsConfig) {
  const fs::path conf = out("run.conf");
  std::ofstream(conf) << "# defaults\nmax-iterations = 3\nrank-variable = 2\nrank-replicate = 1\n"
                         "tolerance = 1e-300\n";
  const auto base = std::vector<std::string>{"fit", data().string(), "--config", conf.string()};

  auto args = base;
  args.insert(args.end(), {"-o", out("prec_config").string()});
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_EQ(iterations_of(out("prec_config")), 3);

  ::setenv("MLFPCA_MAX_ITERATIONS", "5", 1);
  args = base;
  args.insert(args.end(), {"-o", out("prec_env").string()});
  const int env_code = cli(args).code;
  args = base;
  args.insert(args.end(), {"-o", out("prec_flag").string(), "--max-iterations", "7"});
  const int flag_code = cli(args).code;
  ::unsetenv("MLFPCA_MAX_ITERATIONS");
  ASSERT_EQ(env_code, 0);
  ASSERT_EQ(flag_code, 0);
  EXPECT_EQ(iterations_of(out("prec_env")), 5);
  EXPECT_EQ(iterations_of(out("prec_flag")), 7);
  const std::string manifest = slurp(out("prec_flag") / "manifest.conf");
  EXPECT_NE(manifest.find("max-iterations=7"), std::string::npos) << manifest;

  std::ofstream(out("bad.conf")) << "no-such-option = 1\n";
  const auto bad = cli({"fit", data().string(), "-o", out("bad").string(), "--config",
                        out("bad.conf").string()});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("bad.conf:1"), std::string::npos) << bad.err;
}

TEST_F(CliTest, ManifestReproducesRun) {
  const fs::path a = out("manifest_a");
  ASSERT_EQ(cli({"fit", data().string(), "-o", a.string(), "--rank-variable", "2",
                 "--rank-replicate", "1", "--max-iterations", "20"})
                .code,
            0);
  const fs::path b = out("manifest_b");
  const auto r = cli({"fit", data().string(), "-o", b.string(), "--config",
                      (a / "manifest.conf").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(a / "model.json"), slurp(b / "model.json"));
}

TEST(CliBinary, ExitCodes) {
  const std::string exe = MLFPCA_CLI_PATH;
  const auto status = [&](const std::string& args) {
    const int s = std::system((exe + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("--version"), 0);
  EXPECT_EQ(status("fit /nonexistent/data.csv -o /tmp/mlfpca_never"), 1);
}

}  // namespace
}  // namespace mlfpca
