#include <gtest/gtest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tienet/checkpoint.hpp"
#include "tienet/config.hpp"
#include "tienet/data.hpp"
#include "tienet/experiment.hpp"
#include "tienet/metrics.hpp"

namespace fs = std::filesystem;
using namespace tienet;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  static fs::path root_;

  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("tienet_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    // One small shared dataset for every test.
    const Outcome r = run("gen --out " + (root_ / "data").string() +
                      " --train-size 24 --val-size 12 --test-size 16 --image-size 20 --seed 4");
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static Outcome run(const std::string& args) {
    const fs::path out = root_ / "stdout.txt", err = root_ / "stderr.txt";
    const std::string cmd = std::string(TIENET_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  static std::string small_model() { return " --hidden 6 --embed 5 --att-hidden 6 --att-rows 2 --spatial-hidden 4 "; }

  static fs::path data() { return root_ / "data"; }
  static fs::path dir(const std::string& name) { return root_ / name; }

  static fs::path train(const std::string& name, const std::string& mode, const std::string& extra = "") {
    const Outcome r = run("train --data " + data().string() + " --out " + dir(name).string() + " --mode " + mode +
                      " --epochs 2" + small_model() + extra);
    EXPECT_EQ(r.code, 0) << r.err;
    return dir(name);
  }
};

fs::path Cli::root_;

}  // namespace

TEST_F(Cli, GenWritesSplitsAndIsDeterministic) {
  for (const char* f : {"train.tsv", "val.tsv", "test.tsv", "spec.cfg", "manifest.json"})
    EXPECT_TRUE(fs::exists(data() / f)) << f;
  ASSERT_EQ(run("gen --out " + dir("again").string() +
                " --train-size 24 --val-size 12 --test-size 16 --image-size 20 --seed 4")
                .code,
            0);
  for (const char* f : {"train.tsv", "val.tsv", "test.tsv"}) EXPECT_EQ(slurp(data() / f), slurp(dir("again") / f));
  const auto manifest = nlohmann::json::parse(slurp(data() / "manifest.json"));
  EXPECT_EQ(manifest["command"], "gen");
  EXPECT_EQ(manifest["artifacts"].size(), 4u);
}

TEST_F(Cli, BadKeysAndValuesExitTwoNamingTheKey) {
  Outcome r = run("gen --out " + dir("bad").string() + " --noisiness 3");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE((r.out + r.err).find("noisiness"), std::string::npos);

  r = run("gen --out " + dir("bad").string() + " --noise minus-one");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("noise"), std::string::npos);

  std::ofstream(dir("bad.cfg")) << "train_size = 10\nwarp_factor = 9\n";
  r = run("gen --out " + dir("bad").string() + " --config " + dir("bad.cfg").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("warp_factor"), std::string::npos);

  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  std::ofstream(dir("over.cfg")) << "train_size = 10\nval_size = 5\ntest_size = 5\nimage_size = 20\n";
  ASSERT_EQ(run("gen --out " + dir("over").string() + " --config " + dir("over.cfg").string() + " --train-size 7").code,
            0);
  EXPECT_EQ(data::load_dataset(dir("over") / "train.tsv").size(), 7u);
  EXPECT_EQ(data::load_dataset(dir("over") / "val.tsv").size(), 5u);
}

TEST_F(Cli, ZeroLearningRateCheckpointEqualsInitialisation) {
  const fs::path m = train("lr0", "ir", "--lr 0 --seed 13");
  const auto bundle = experiment::load_bundle(m);
  const TieNetModel fresh(bundle.model->config(), 13);
  const auto saved = load_checkpoint(m / "model.ckpt");
  ASSERT_EQ(saved.size(), fresh.parameters().size());
  for (std::size_t i = 0; i < saved.size(); ++i) EXPECT_EQ(saved[i].value, fresh.parameters()[i].value) << saved[i].name;
}

TEST_F(Cli, TinyRunIsFast) {
  const fs::path tiny = dir("tiny");
  ASSERT_EQ(run("gen --out " + tiny.string() + " --train-size 10 --val-size 4 --test-size 4 --seed 2").code, 0);
  const auto start = std::chrono::steady_clock::now();
  const Outcome r = run("train --data " + tiny.string() + " --out " + dir("tiny_m").string() + " --mode igr --epochs 5");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_LT(secs, 60.0);
}

TEST_F(Cli, LogColumnsFollowMode) {
  auto column = [](const fs::path& log, std::size_t col) {
    std::ifstream in(log);
    std::string line;
    std::getline(in, line);
    std::vector<double> values;
    while (std::getline(in, line)) {
      std::istringstream row(line);
      std::string cell;
      for (std::size_t i = 0; i <= col; ++i) std::getline(row, cell, '\t');
      values.push_back(std::stod(cell));
    }
    return values;
  };
  const fs::path igr = train("log_igr", "igr");
  const fs::path ir = train("log_ir", "ir");
  for (double v : column(igr / "train_log.tsv", 2)) EXPECT_GT(v, 0.0);
  for (double v : column(ir / "train_log.tsv", 2)) EXPECT_EQ(v, 0.0);
  for (double v : column(ir / "train_log.tsv", 1)) EXPECT_GT(v, 0.0);
}

TEST_F(Cli, EvalSummaryAndOracleHook) {
  const fs::path r = train("ev_r", "r");
  const fs::path i = train("ev_i", "i-baseline");
  const fs::path g = train("ev_igr", "igr");
  Outcome run_eval = run("eval --data " + data().string() + " --model " + i.string() + " --model " + g.string() +
                     " --model " + r.string() + " --out " + dir("ev").string());
  ASSERT_EQ(run_eval.code, 0) << run_eval.err;
  const std::string summary = slurp(dir("ev") / "summary.tsv");
  EXPECT_EQ(summary.substr(0, summary.find('\n')), "class\tR\tI\tI+GR\t#");
  EXPECT_TRUE(fs::exists(dir("ev") / "text_metrics_igr.tsv"));
  EXPECT_TRUE(fs::exists(dir("ev") / "roc" / "igr"));

  // The summary's #wAVG row agrees with metrics::aggregate over its own cells.
  std::istringstream rows(summary);
  std::string line;
  std::getline(rows, line);
  std::vector<std::optional<double>> col;
  std::vector<std::size_t> counts;
  double wavg = -1;
  while (std::getline(rows, line)) {
    std::vector<std::string> cells;
    std::istringstream s(line);
    for (std::string c; std::getline(s, c, '\t');) cells.push_back(c);
    if (cells[0] == "AVG") continue;
    if (cells[0] == "#wAVG") {
      wavg = std::stod(cells[1]);
      continue;
    }
    col.push_back(cells[1] == "--" ? std::nullopt : std::optional<double>(std::stod(cells[1])));
    counts.push_back(std::stoul(cells.back()));
  }
  EXPECT_NEAR(metrics::aggregate(col, counts).weighted, wavg, 2e-4);

  run_eval = run("eval --oracle-scores --data " + data().string() + " --model " + i.string() + " --out " +
                 dir("ev_oracle").string());
  ASSERT_EQ(run_eval.code, 0) << run_eval.err;
  std::istringstream orows(slurp(dir("ev_oracle") / "summary.tsv"));
  std::getline(orows, line);
  while (std::getline(orows, line)) {
    std::istringstream s(line);
    std::string name, cell;
    std::getline(s, name, '\t');
    std::getline(s, cell, '\t');
    if (cell != "--") EXPECT_EQ(cell, "1.0000") << name;
  }
}

TEST_F(Cli, AbsentClassPrintsDashes) {
  std::ofstream(dir("absent.cfg")) << "train_size = 12\nval_size = 6\ntest_size = 6\nimage_size = 20\nprior_scale = 0.2\n";
  ASSERT_EQ(run("gen --out " + dir("absent").string() + " --config " + dir("absent.cfg").string()).code, 0);
  ASSERT_EQ(run("train --data " + dir("absent").string() + " --out " + dir("absent_m").string() +
                " --mode i-baseline --epochs 1")
                .code,
            0);
  const Outcome r = run("eval --data " + dir("absent").string() + " --model " + dir("absent_m").string() + " --out " +
                    dir("absent_ev").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(dir("absent_ev") / "summary.tsv").find("--"), std::string::npos);
}

TEST_F(Cli, GenerateIsDeterministicAndWritesTrace) {
  const fs::path g = train("gen_igr", "igr");
  const std::string test_file = (data() / "test.tsv").string();
  ASSERT_EQ(run("generate --model " + g.string() + " --dataset " + test_file + " --index 3 --out " + dir("g1").string()).code, 0);
  ASSERT_EQ(run("generate --model " + g.string() + " --dataset " + test_file + " --index 3 --out " + dir("g2").string()).code, 0);
  EXPECT_EQ(slurp(dir("g1") / "report.txt"), slurp(dir("g2") / "report.txt"));
  EXPECT_EQ(slurp(dir("g1") / "trace.txt"), slurp(dir("g2") / "trace.txt"));
  EXPECT_EQ(slurp(dir("g1") / "trace.txt").rfind("tokens ", 0), 0u);

  const fs::path i = train("gen_i", "i-baseline");
  EXPECT_EQ(run("generate --model " + i.string() + " --dataset " + test_file + " --out " + dir("g3").string()).code, 2);
  EXPECT_EQ(run("generate --model " + g.string() + " --dataset " + test_file + " --index 999 --out " + dir("g4").string()).code,
            2);
}

TEST_F(Cli, GradcheckExitCodeFollowsResult) {
  Outcome r = run("gradcheck --out " + dir("gc").string());
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir("gc") / "gradcheck.tsv"));
  r = run("gradcheck --modes ir --corrupt-op sigmoid --out " + dir("gc_bad").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}
