#include "refseg/io.hpp"
#include "refseg/scene.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace refseg {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(REFSEG_CLI) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root = new fs::path(fs::temp_directory_path() / "refseg_cli_test");
    fs::remove_all(*root);
    fs::create_directories(*root);
  }
  static void TearDownTestSuite() {
    fs::remove_all(*root);
    delete root;
  }
  static fs::path dir(const std::string& name) { return *root / name; }
  static fs::path* root;
};
fs::path* CliTest::root = nullptr;

TEST_F(CliTest, GenZeroWritesManifestOnly) {
  const CliRun r = run("gen --out " + dir("empty").string() + " --count 0");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir("empty") / "manifest.jsonl"));
  EXPECT_EQ(fs::file_size(dir("empty") / "manifest.jsonl"), 0u);
  EXPECT_TRUE(read_dataset(dir("empty")).empty());
}

TEST_F(CliTest, GenIsDeterministic) {
  ASSERT_EQ(run("gen --out " + dir("a").string() + " --count 20 --seed 9").code, 0);
  ASSERT_EQ(run("gen --out " + dir("b").string() + " --count 20 --seed 9").code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir("a"))) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), dir("a"));
    EXPECT_EQ(slurp(e.path()), slurp(dir("b") / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 40u);
}

TEST_F(CliTest, GenRefusesNonEmptyDirectory) {
  ASSERT_EQ(run("gen --out " + dir("full").string() + " --count 1").code, 0);
  EXPECT_EQ(run("gen --out " + dir("full").string() + " --count 1").code, 2);
  EXPECT_EQ(run("gen --out " + dir("full").string() + " --count 1 --force").code, 0);
}

TEST_F(CliTest, GeneratedSetPassesResolver) {
  ASSERT_EQ(run("gen --out " + dir("big").string() + " --count 500 --seed 4").code, 0);
  const auto samples = read_dataset(dir("big"));
  ASSERT_EQ(samples.size(), 500u);
  for (const auto& s : samples) {
    EXPECT_EQ(resolve_expression(s.expression, s.meta), std::vector<int>{s.meta.target}) << s.expression;
  }
}

TEST_F(CliTest, UsageErrors) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("gen").code, 2);
  EXPECT_EQ(run("train --data /nonexistent --out " + dir("none").string()).code, 2);
  EXPECT_EQ(run("verify --suite nope").code, 2);
}

TEST_F(CliTest, TrainEvalInfer) {
  ASSERT_EQ(run("gen --out " + dir("tr").string() + " --count 16 --canvas 32 --seed 1").code, 0);
  ASSERT_EQ(run("gen --out " + dir("ev").string() + " --count 6 --canvas 32 --seed 2 --previews").code, 0);

  const fs::path cfg = dir("bad.cfg");
  std::ofstream(cfg) << "train.max_iters = 2\nmodel.colour = 3\n";
  const CliRun bad = run("train --data " + dir("tr").string() + " --config " + cfg.string() + " --profile toy --out " +
                      dir("badrun").string());
  EXPECT_EQ(bad.code, 2) << bad.out;
  EXPECT_FALSE(fs::exists(dir("badrun") / "latest.ckpt"));

  const CliRun tr = run("train --data " + dir("tr").string() + " --eval-data " + dir("ev").string() +
                     " --profile toy --max-iters 3 --eval-every 3 --out " + dir("run").string());
  ASSERT_EQ(tr.code, 0) << tr.out;
  const fs::path ckpt = dir("run") / "latest.ckpt";
  ASSERT_TRUE(fs::exists(ckpt));

  const CliRun ev = run("eval --data " + dir("ev").string() + " --ckpt " + ckpt.string() + " --json " +
                     dir("report.json").string());
  ASSERT_EQ(ev.code, 0) << ev.out;
  const auto report = nlohmann::json::parse(slurp(dir("report.json")));
  EXPECT_EQ(report.at("count").get<int>(), 6);
  EXPECT_EQ(report.at("length_buckets").size(), 4u);
  const double m = report.at("mean_iou").get<double>();
  EXPECT_GE(m, 0.0);
  EXPECT_LE(m, 1.0);

  const fs::path image = dir("ev") / "previews" / "000000.ppm";
  ASSERT_TRUE(fs::exists(image));
  EXPECT_EQ(run("infer --image " + image.string() + " --expr \"\" --ckpt " + ckpt.string()).code, 2);
  const CliRun inf = run("infer --image " + image.string() + " --expr circle --ckpt " + ckpt.string() + " --out " +
                      dir("inf").string() + " --dump-attention");
  ASSERT_EQ(inf.code, 0) << inf.out;
  const auto att = nlohmann::json::parse(slurp(dir("inf") / "word_attention.json"));
  ASSERT_EQ(att.at("weights").size(), 1u);
  EXPECT_EQ(att.at("weights")[0].get<double>(), 1.0);
  const auto prob = load_tensor<float>(dir("inf") / "prob.bin");
  EXPECT_TRUE((prob.values() > 0.0f).all() && (prob.values() < 1.0f).all());
  EXPECT_TRUE(fs::exists(dir("inf") / "mask.pgm"));
}

TEST_F(CliTest, VerifyInvariants) {
  const CliRun r = run("verify --suite invariants");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("[FAIL]"), std::string::npos);
}

}  // namespace
}  // namespace refseg
