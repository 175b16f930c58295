#include "support.hpp"

#include "bapt/pointer.hpp"

#include <gtest/gtest.h>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

namespace {

namespace fs = std::filesystem;
using namespace bapt::testing;

struct Result {
  int rc = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(BAPT_CLI_PATH) + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

const std::string kSmall = "--embed-dim 8 --hidden-dim 6 --object-dim 8 --joint-dim 10 --mlp-dim 10";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("bapt_cli_test_" + std::to_string(getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    // A small dev file keeps each command fast.
    std::ifstream in(data_dir() + "/dev.json");
    std::ofstream out(dir / "dev.json");
    std::string line;
    for (int i = 0; i < 12 && std::getline(in, line); ++i) out << line << "\n";
    std::ofstream(dir / "empty.json").close();
    std::ofstream(dir / "garbage.ckpt") << "not a checkpoint";
    const auto r = run("train --train " + data_dir() + "/train.json --dev " + (dir / "dev.json").string() +
                       " --vocab " + (dir / "vocab.txt").string() + " --checkpoint " + ckpt() +
                       " --max-epochs 1 --batch-size 50 " + kSmall);
    ASSERT_EQ(r.rc, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir); }

  static std::string ckpt() { return (dir / "model.ckpt").string(); }
  static std::string dev() { return (dir / "dev.json").string(); }

  static fs::path dir;
};

fs::path Cli::dir;

TEST_F(Cli, BuildVocabIsReproducible) {
  const auto a = (dir / "va.txt").string(), b = (dir / "vb.txt").string();
  auto r = run("build-vocab --train " + data_dir() + "/train.json --out " + a);
  ASSERT_EQ(r.rc, 0);
  EXPECT_EQ(r.out.rfind("vocab_size=", 0), 0u);
  ASSERT_EQ(run("build-vocab --train " + data_dir() + "/train.json --vocab " + b).rc, 0);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_FALSE(slurp(a).empty());
  EXPECT_EQ(slurp(a), slurp(dir / "vocab.txt"));
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("build-vocab --train " + (dir / "missing.json").string() + " --out " + (dir / "x.txt").string()).rc, 2);
  EXPECT_EQ(run("eval --checkpoint " + ckpt() + " --test " + (dir / "empty.json").string()).rc, 2);
  EXPECT_EQ(run("eval --checkpoint " + (dir / "garbage.ckpt").string() + " --test " + dev()).rc, 4);
  EXPECT_EQ(run("eval --checkpoint " + (dir / "nothing.ckpt").string() + " --test " + dev()).rc, 2);
  EXPECT_EQ(run("no-such-command").rc, 1);
  EXPECT_EQ(run("train --dev " + dev()).rc, 1);
}

TEST_F(Cli, TrainWritesMetricsPerEpoch) {
  const auto metrics = lines_of(slurp(dir / "metrics.jsonl"));
  ASSERT_EQ(metrics.size(), 1u);
  const auto m = nlohmann::json::parse(metrics[0]);
  EXPECT_EQ(m.at("epoch"), 1);
  EXPECT_GE(m.at("accuracy").get<double>(), 0.0);
  EXPECT_LE(m.at("accuracy").get<double>(), 1.0);
}

TEST_F(Cli, TrainVariants) {
  for (const std::string extra : {"--model bienc", "--no-pointer", "--model biatt --pooling mean"}) {
    const auto path = (dir / "variant.ckpt").string();
    const auto r = run("train --train " + dev() + " --dev " + dev() + " --vocab " + (dir / "vocab.txt").string() +
                       " --checkpoint " + path + " --max-epochs 0 " + kSmall + " " + extra);
    EXPECT_EQ(r.rc, 0) << extra;
    EXPECT_TRUE(fs::exists(path)) << extra;
    EXPECT_EQ(run("eval --checkpoint " + path + " --test " + dev()).rc, 0) << extra;
    fs::remove(path);
  }
  EXPECT_EQ(run("train --train " + dev() + " --dev " + dev() + " --checkpoint " + (dir / "v.ckpt").string() +
                " --model transformer")
                .rc,
            1);
}

TEST_F(Cli, EvalReportsAccuracyDeterministically) {
  const auto a = run("eval --checkpoint " + ckpt() + " --test " + dev());
  const auto b = run("eval --checkpoint " + ckpt() + " --data " + dev());
  ASSERT_EQ(a.rc, 0);
  EXPECT_EQ(a.out, b.out);
  double accuracy = -1;
  std::size_t n = 0;
  ASSERT_EQ(std::sscanf(a.out.c_str(), "accuracy=%lf n=%zu", &accuracy, &n), 2);
  EXPECT_EQ(n, 12u);
  EXPECT_GE(accuracy, 0.0);
  EXPECT_LE(accuracy, 1.0);
}

TEST_F(Cli, PredictAndDumpOrders) {
  const auto out = (dir / "pred.jsonl").string();
  ASSERT_EQ(run("predict --checkpoint " + ckpt() + " --test " + dev() + " --out " + out).rc, 0);
  const auto preds = lines_of(slurp(out));
  ASSERT_EQ(preds.size(), 12u);
  for (const auto& line : preds) {
    const auto j = nlohmann::json::parse(line);
    const double p = j.at("probability");
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
    EXPECT_EQ(j.at("scores").size(), 3u);
    EXPECT_LT(j.at("chosen").get<int>(), 3);
  }

  const auto dumped = run("dump-orders --checkpoint " + ckpt() + " --test " + dev());
  ASSERT_EQ(dumped.rc, 0);
  const auto records = lines_of(dumped.out);
  ASSERT_EQ(records.size(), 12u);
  std::ifstream raw(dev());
  for (const auto& line : records) {
    std::string source;
    std::getline(raw, source);
    const auto boxes = nlohmann::json::parse(source).at("structured_rep");
    const auto orders = nlohmann::json::parse(line).at("orders");
    ASSERT_EQ(orders.size(), 3u);
    for (std::size_t j = 0; j < 3; ++j) {
      auto order = orders[j].get<std::vector<std::size_t>>();
      EXPECT_TRUE(bapt::is_permutation_of_range(order, boxes[j].size()));
    }
  }
}

}  // namespace
