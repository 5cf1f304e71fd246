#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ddsr/pipeline.hpp"

namespace ddsr {
namespace {

namespace fs = std::filesystem;

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("ddsr_test_" + name);
  fs::remove_all(d);
  return d;
}

// A run small enough for unit tests.
json tiny_run(const fs::path& dir) {
  json j = json::parse(R"({
    "seed": 5,
    "data": {"synthetic": {"enabled": true, "num_items": 80, "num_users": 120, "clusters": 4, "embedding_dim": 8}},
    "tokenizer": {"m": 2, "K": 8, "rqvae_hidden": [16], "rqvae_latent": 4, "rqvae_epochs": 3},
    "diffusion": {"T": 20},
    "model": {"d": 16, "layers": 1, "heads": 2, "ff": 32, "max_items": 8},
    "train": {"max_epochs": 2, "valid_users": 50},
    "infer": {"skip_divisor": 5}
  })");
  j["data"]["output_dir"] = dir.string();
  return j;
}

TEST(Config, DefaultsParse) {
  const RunConfig c = parse_run_config(json::object(), nullptr);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.model.m, c.tokenizer.m);
  EXPECT_EQ(c.diffusion.K, c.tokenizer.K);
  EXPECT_EQ(c.infer.alignment, Alignment::anchored);
}

TEST(Config, UnknownKeyRejected) {
  EXPECT_THROW(parse_run_config(json{{"model", {{"depth", 3}}}}, nullptr), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"extra", 1}}, nullptr), ConfigError);
}

TEST(Config, WrongTypeRejected) {
  EXPECT_THROW(parse_run_config(json{{"train", {{"lr", "fast"}}}}, nullptr), ConfigError);
}

TEST(Config, ValidationBeforeWork) {
  EXPECT_THROW(parse_run_config(json{{"model", {{"d", 10}, {"heads", 4}}}}, nullptr), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"infer", {{"skip_divisor", 500}}}}, nullptr), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"diffusion", {{"transition", "gaussian"}}}}, nullptr), ConfigError);
  EXPECT_THROW(parse_run_config(json{{"tokenizer", {{"K", 1}}}}, nullptr), ConfigError);
}

TEST(Config, DotPathOverrides) {
  json cfg = default_config();
  apply_override(cfg, "train.lr=0.005");
  apply_override(cfg, "tokenizer.method=rqvae");
  apply_override(cfg, "data.synthetic.enabled=true");
  const RunConfig c = parse_run_config(cfg, nullptr);
  EXPECT_DOUBLE_EQ(c.train.lr, 0.005);
  EXPECT_EQ(c.tokenizer.method, TokenizerMethod::rqvae);
  EXPECT_TRUE(c.synthetic);
  EXPECT_THROW(apply_override(cfg, "train.learning_rate=1"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "train=1"), ConfigError);
  EXPECT_THROW(apply_override(cfg, "novalue"), ConfigError);
}

TEST(Config, SeedFromEnvironment) {
  EXPECT_EQ(parse_run_config(json::object(), "1234").seed, 1234u);
  EXPECT_THROW(parse_run_config(json::object(), "abc"), ConfigError);
}

TEST(Config, FingerprintIgnoresOutputDir) {
  const auto a = parse_run_config(json{{"data", {{"output_dir", "x"}}}}, nullptr);
  const auto b = parse_run_config(json{{"data", {{"output_dir", "y"}}}}, nullptr);
  const auto c = parse_run_config(json{{"seed", 1}}, nullptr);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(Pipeline, MissingArtifactsNameThePath) {
  const auto dir = fresh_dir("deps");
  Pipeline p(parse_run_config(tiny_run(dir), nullptr));
  try {
    p.tokenize();
    FAIL();
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find("dataset.json"), std::string::npos);
  }
  p.prepare();
  p.tokenize();
  try {
    p.evaluate();
    FAIL();
  } catch (const DependencyError& e) {
    EXPECT_NE(std::string(e.what()).find((dir / "checkpoint" / "manifest.json").string()), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Pipeline, CodebookShapeMismatchIsConfigError) {
  const auto dir = fresh_dir("mismatch");
  Pipeline p(parse_run_config(tiny_run(dir), nullptr));
  p.prepare();
  p.tokenize();
  json other = tiny_run(dir);
  other["tokenizer"]["K"] = 4;
  Pipeline q(parse_run_config(other, nullptr));
  EXPECT_THROW(q.train(), ConfigError);
  fs::remove_all(dir);
}

TEST(Pipeline, EndToEndIsByteIdentical) {
  const auto d1 = fresh_dir("det1"), d2 = fresh_dir("det2");
  Pipeline(parse_run_config(tiny_run(d1), nullptr)).run_all();
  Pipeline p2(parse_run_config(tiny_run(d2), nullptr));
  p2.run_all();
  for (const char* f : {"dataset.json", "codebook.json", "metrics.json", "metrics.md", "train_log.jsonl"})
    EXPECT_EQ(slurp((d1 / f).string()), slurp((d2 / f).string())) << f;
  const auto recs = p2.recommend("user_00003", 5);
  EXPECT_EQ(recs.size(), 5u);
  EXPECT_THROW(p2.recommend("nobody", 5), DataError);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Pipeline, AblationGridHasNineRows) {
  const auto dir = fresh_dir("ablate");
  json cfg = tiny_run(dir);
  cfg["train"]["max_epochs"] = 1;
  Pipeline p(parse_run_config(cfg, nullptr));
  const auto rows = p.ablate();
  ASSERT_EQ(rows.size(), 9u);
  for (const auto& r : rows) EXPECT_GT(r.report.overall.users, 0u) << r.variant.name;
  const json j = json::parse(slurp((dir / "ablation.json").string()));
  EXPECT_EQ(j["rows"].size(), 9u);
  const std::string md = slurp((dir / "ablation.md").string());
  EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 11);
  fs::remove_all(dir);
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(DDSR_CLI_PATH) + " " + args + " 2>/dev/null >/dev/null").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  const auto dir = fresh_dir("cli");
  const std::string out = " -o " + dir.string();
  EXPECT_EQ(run_cli("train --set model.bogus=1" + out), 2);
  EXPECT_EQ(run_cli("evaluate" + out), 3);
  EXPECT_EQ(run_cli("prepare --config /nonexistent/config.json" + out), 3);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("prepare --synthetic --set data.synthetic.num_items=40 --set data.synthetic.num_users=30 "
                    "--set data.synthetic.clusters=4" + out),
            0);
  EXPECT_TRUE(fs::exists(dir / "dataset.json"));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace ddsr
