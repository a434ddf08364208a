#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "lgcn/checkpoint.hpp"
#include "lgcn/config.hpp"
#include "lgcn/gradcheck_suite.hpp"
#include "lgcn/heatmap.hpp"
#include "lgcn/params.hpp"
#include "lgcn/synth.hpp"
#include "lgcn/trainer.hpp"

using namespace lgcn;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CliResult {
  int code;
  std::string out;
};

CliResult run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + LGCN_CLI_PATH + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "lgcn_cli_test";
    fs::remove_all(root_);
    ASSERT_EQ(run("gen --seed 3 --places 12 --views 4 --out " + data()).code, 0);
    ASSERT_EQ(run("train --data " + data() + " --out " + (root_ / "trained").string() + " --epochs 1 --seed 2").code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string data() { return (root_ / "data").string(); }
  static std::string path(const std::string& name) { return (root_ / name).string(); }
  static std::string trained() { return (root_ / "trained" / "epoch_1.ckpt").string(); }

  static fs::path root_;
};

fs::path Cli::root_;

}  // namespace

TEST_F(Cli, GenCountsAndIsReproducible) {
  const CliResult a = run("gen --seed 7 --places 50 --views 6 --out " + path("g1"));
  const CliResult b = run("gen --seed 7 --places 50 --views 6 --out " + path("g2"));
  ASSERT_EQ(a.code, 0);
  std::size_t images = 0;
  for (const auto& e : fs::directory_iterator(path("g1") + "/images")) images += e.path().extension() == ".ppm";
  EXPECT_EQ(images, 300u);
  EXPECT_EQ(read_manifest_file(path("g1") + "/manifest.csv").records.size(), 300u);
  EXPECT_EQ(sha256_file(path("g1") + "/manifest.csv"), sha256_file(path("g2") + "/manifest.csv"));
  EXPECT_NE(a.out.find("audit ok"), std::string::npos) << a.out;
  EXPECT_EQ(b.code, 0);
  EXPECT_EQ(run("gen --places 1 --out " + path("g3")).code, 1);
}

TEST_F(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
  EXPECT_EQ(run("eval --data " + data() + " --n 0").code, 1);
  EXPECT_EQ(run("gradcheck --scope resnet").code, 1);
  EXPECT_EQ(run("eval --data " + data() + " --dfm-mode eq6").code, 1);
  std::ofstream(path("bad.json")) << R"({"train": {"learning_rat": 0.1}})";
  EXPECT_EQ(run("train --data " + data() + " --out " + path("bad") + " --config " + path("bad.json")).code, 1);
  std::ofstream(path("bad2.json")) << R"({"optimizer": {}})";
  EXPECT_EQ(run("eval --data " + data() + " --config " + path("bad2.json")).code, 1);
}

TEST_F(Cli, HelpListsEveryFlag) {
  const std::map<std::string, std::vector<std::string>> flags{
      {"gen", {"--seed", "--places", "--views", "--size", "--out"}},
      {"train",
       {"--data", "--out", "--config", "--seed", "--epochs", "--lr", "--freeze-backbone", "--threads", "--disable-fsa",
        "--disable-cnn-stream", "--disable-dfm", "--dfm-mode", "--static-fusion"}},
      {"eval",
       {"--data", "--checkpoint", "--n", "--per-query", "--oracle-check", "--threads", "--disable-fsa",
        "--disable-cnn-stream", "--disable-dfm", "--dfm-mode", "--static-fusion"}},
      {"gradcheck", {"--scope", "--inject-bug", "--eps", "--tol"}},
      {"heatmap", {"--image", "--out", "--checkpoint", "--disable-fsa", "--static-fusion"}}};
  for (const auto& [cmd, names] : flags) {
    const CliResult r = run(cmd + " --help");
    EXPECT_EQ(r.code, 0) << cmd;
    for (const auto& n : names) EXPECT_NE(r.out.find(n), std::string::npos) << cmd << " " << n;
  }
}

TEST_F(Cli, ConfigEchoRoundTrips) {
  std::ofstream(path("cfg.json")) << R"({"train": {"margin": 0.2, "batch_size": 4}, "ablation": {"static_fusion": true}})";
  ASSERT_EQ(run("train --data " + data() + " --out " + path("echo") + " --config " + path("cfg.json") +
                " --epochs 1 --seed 5 --disable-fsa")
                .code,
            0);
  const json echo = json::parse(slurp(path("echo") + "/config.json"));
  const RunConfig rc = run_config_from_json(echo);
  EXPECT_EQ(to_json(rc), echo);
  EXPECT_EQ(rc.train.margin, 0.2);
  EXPECT_EQ(rc.train.batch_size, 4u);
  EXPECT_EQ(rc.train.seed, 5u);
  EXPECT_EQ(rc.train.epochs, 1u);
  EXPECT_TRUE(rc.ablation.static_fusion);
  EXPECT_TRUE(rc.ablation.disable_fsa);
  EXPECT_EQ(rc.model, ModelConfig::toy());
}

TEST_F(Cli, ZeroLearningRateLeavesWeights) {
  ASSERT_EQ(run("train --data " + data() + " --out " + path("lr0") + " --epochs 1 --seed 6 --lr 0").code, 0);
  const LoadedCheckpoint ck = load_checkpoint(path("lr0") + "/epoch_1.ckpt");
  const LgcnModel fresh(ModelConfig::toy(), {}, 6);
  const auto all = [](const std::string&) { return true; };
  EXPECT_EQ(serialize_params(ck.model, all), serialize_params(fresh, all));
}

TEST_F(Cli, TrainIsDeterministicAndKeepsBackbone) {
  ASSERT_EQ(run("train --data " + data() + " --out " + path("again") + " --epochs 1 --seed 2").code, 0);
  EXPECT_EQ(slurp(path("again") + "/epoch_1.ckpt"), slurp(trained()));
  EXPECT_EQ(slurp(path("again") + "/report.jsonl"), slurp(path("trained") + "/report.jsonl"));
  std::ifstream report(path("trained") + "/report.jsonl");
  std::string line;
  std::set<std::string> backbone;
  while (std::getline(report, line)) backbone.insert(json::parse(line)["backbone_checksum"].get<std::string>());
  EXPECT_EQ(backbone.size(), 1u);
  EXPECT_EQ(*backbone.begin(), parameter_checksum(LgcnModel(ModelConfig::toy(), {}, 2), true));
}

TEST_F(Cli, NumericFailureExitsTwo) {
  const CliResult r = run("train --data " + data() + " --out " + path("nan") + " --epochs 1 --lr 1e300 --batch-size 1");
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(fs::exists(path("nan") + "/nan_dump.json"));
}

TEST_F(Cli, EvalReportsMonotoneRecallAndMatchesOracle) {
  const CliResult r = run("eval --data " + data() + " --checkpoint " + trained() + " --n 10,1,3,5 --oracle-check --per-query " +
                    path("pq.csv"));
  ASSERT_EQ(r.code, 0) << r.out;
  const json j = json::parse(r.out);
  EXPECT_TRUE(j["oracle_check"]["pass"]);
  EXPECT_EQ(j["n_values"], json({1, 3, 5, 10}));
  double prev = 0;
  for (std::size_t n : {1, 3, 5, 10}) {
    const double v = j["recall"]["R@" + std::to_string(n)];
    EXPECT_GE(v, prev);
    prev = v;
  }
  std::ifstream csv(path("pq.csv"));
  std::size_t lines = 0;
  for (std::string l; std::getline(csv, l);) ++lines;
  EXPECT_EQ(lines, 1u + 24u);
}

TEST_F(Cli, AblationFlagChangesDescriptors) {
  const auto sha = [](const CliResult& r) { return json::parse(r.out)["descriptor_sha256"].get<std::string>(); };
  const CliResult base = run("eval --data " + data() + " --seed 4");
  const CliResult nodfm = run("eval --data " + data() + " --seed 4 --disable-dfm");
  ASSERT_EQ(base.code, 0);
  ASSERT_EQ(nodfm.code, 0);
  EXPECT_NE(sha(base), sha(nodfm));
  EXPECT_EQ(sha(base), sha(run("eval --data " + data(), "LGCN_SEED=4")));
  const CliResult ck = run("eval --data " + data() + " --checkpoint " + trained());
  const CliResult ck_static = run("eval --data " + data() + " --checkpoint " + trained() + " --static-fusion");
  EXPECT_NE(sha(ck), sha(ck_static));
  // a checkpoint cannot switch to concatenation: the head width would change
  EXPECT_EQ(run("eval --data " + data() + " --checkpoint " + trained() + " --disable-dfm").code, 1);
}

TEST_F(Cli, GradcheckCoverageAndNegativeControl) {
  ASSERT_EQ(run("gradcheck --scope all --out " + path("gc.json")).code, 0);
  const json j = json::parse(slurp(path("gc.json")));
  EXPECT_EQ(j["checks"].size(), gradcheck_cases().size());
  for (const auto& c : j["checks"]) EXPECT_TRUE(c["pass"]) << c["op"];
  EXPECT_EQ(run("gradcheck --scope head --inject-bug").code, 2);
  EXPECT_EQ(run("gradcheck --scope conv2d").code, 0);
}

TEST_F(Cli, HeatmapsAreDeterministicAndFlagSensitive) {
  const std::string img = data() + "/images/p0001_v00.ppm";
  ASSERT_EQ(run("heatmap --image " + img + " --checkpoint " + trained() + " --out " + path("h1")).code, 0);
  ASSERT_EQ(run("heatmap --image " + img + " --checkpoint " + trained() + " --out " + path("h2")).code, 0);
  ASSERT_EQ(run("heatmap --image " + img + " --checkpoint " + trained() + " --out " + path("h3") + " --disable-fsa").code, 0);
  for (const char* f : {"f_vit.ppm", "f_res.ppm", "omega.ppm", "fused.ppm"}) {
    ASSERT_TRUE(fs::exists(path("h1") + "/" + f)) << f;
    EXPECT_EQ(slurp(path("h1") + "/" + f), slurp(path("h2") + "/" + f)) << f;
  }
  EXPECT_NE(sha256_file(path("h1") + "/f_vit.ppm"), sha256_file(path("h3") + "/f_vit.ppm"));
  const Tensor omega = read_ppm(path("h1") + "/omega.ppm");
  EXPECT_EQ(omega.shape(), (Shape{64, 64, 3}));
}

TEST(Heatmap, GateMapUsesFixedUnitRange) {
  LgcnModel model(gradcheck_config(), {}, 1);
  Rng rng(2);
  const Tensor img = randu({16, 16, 3}, 0, 1, rng);
  ImageTrace t;
  model.forward_image(img, &t);
  for (double v : t.omega.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  // black at 0, white at 1, regardless of the values present
  const Tensor ends = colorize(Tensor({1, 2}, {0.0, 1.0}), 0.0, 1.0, 1);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(ends.at(0, 0, k), 0.0);
    EXPECT_EQ(ends.at(0, 1, k), 1.0);
  }
  const auto maps = render_heatmaps(model, img);
  ASSERT_EQ(maps.size(), 4u);
  EXPECT_EQ(maps[2].first, "omega");
  const Tensor& o = maps[2].second;
  const std::size_t cell = o.dim(0) / t.omega.dim(0);
  for (std::size_t y = 0; y < t.omega.dim(0); ++y)
    for (std::size_t x = 0; x < t.omega.dim(1); ++x) {
      double mean = 0;
      for (std::size_t c = 0; c < t.omega.dim(2); ++c) mean += t.omega.at(y, x, c);
      mean /= static_cast<double>(t.omega.dim(2));
      const Tensor expect = colorize(Tensor({1, 1}, {mean}), 0.0, 1.0, 1);
      for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(o.at(y * cell, x * cell, k), expect[k]);
    }
}

TEST(Heatmap, ResponseMapIsChannelNorm) {
  Tensor f({1, 2, 2}, {3, 4, 0, 0});
  const Tensor r = response_map(f);
  EXPECT_EQ(r.at(0, 0), 5.0);
  EXPECT_EQ(r.at(0, 1), 0.0);
}
