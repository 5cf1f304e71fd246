// Command line front end: ddsr <prepare|tokenize|train|evaluate|recommend|ablate>.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ddsr/ddsr.hpp"

namespace {

enum ExitCode { kOk = 0, kConfig = 2, kDependency = 3, kRuntime = 4 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string output_dir;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "JSON config document");
  cmd->add_option("--set", c.overrides, "Override one key, e.g. --set train.lr=0.0005")->allow_extra_args(false);
  cmd->add_option("-o,--output-dir", c.output_dir, "Shorthand for --set data.output_dir=<dir>");
  cmd->add_flag("-q,--quiet", c.quiet, "Only log warnings and errors");
}

ddsr::Pipeline make_pipeline(Common c, std::vector<std::string> extra = {}) {
  if (!c.output_dir.empty()) c.overrides.push_back("data.output_dir=\"" + c.output_dir + "\"");
  c.overrides.insert(c.overrides.end(), extra.begin(), extra.end());
  if (c.quiet) ddsr::logger().set_level(spdlog::level::warn);
  return ddsr::Pipeline(ddsr::load_run_config(c.config, c.overrides));
}

int run(int argc, char** argv) {
  CLI::App app{"Discrete diffusion sequential recommender"};
  app.require_subcommand(1);
  Common common;

  auto* prepare = app.add_subcommand("prepare", "Load interactions (or generate a synthetic corpus) and write the split dataset");
  bool synthetic = false;
  add_common(prepare, common);
  prepare->add_flag("--synthetic", synthetic, "Generate the synthetic corpus described by data.synthetic");

  auto* tokenize = app.add_subcommand("tokenize", "Fit the configured tokenizer and write codebook.json");
  add_common(tokenize, common);

  auto* train = app.add_subcommand("train", "Train the approximator and write the checkpoint and train log");
  add_common(train, common);

  auto* evaluate = app.add_subcommand("evaluate", "Rank the full catalog for every user and write metrics.json");
  std::string split = "test";
  add_common(evaluate, common);
  evaluate->add_option("--split", split, "valid or test")->check(CLI::IsMember({"valid", "test"}));

  auto* recommend = app.add_subcommand("recommend", "Print the top items for one user as JSON");
  std::string user;
  int top = 10;
  add_common(recommend, common);
  recommend->add_option("--user", user, "User id")->required();
  recommend->add_option("--top", top, "Number of items");

  auto* ablate = app.add_subcommand("ablate", "Run the transition x tokenizer grid and write ablation.json/.md");
  add_common(ablate, common);

  auto* run_all = app.add_subcommand("run", "prepare, tokenize, train and evaluate in one go");
  add_common(run_all, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*prepare) {
      auto p = make_pipeline(common, synthetic ? std::vector<std::string>{"data.synthetic.enabled=true"}
                                               : std::vector<std::string>{});
      p.prepare();
    } else if (*tokenize) {
      make_pipeline(common).tokenize();
    } else if (*train) {
      const auto r = make_pipeline(common).train();
      if (r.halted_non_finite) return kRuntime;
    } else if (*evaluate) {
      auto p = make_pipeline(common);
      const auto report = p.evaluate(split == "valid" ? ddsr::SplitKind::valid : ddsr::SplitKind::test);
      std::cout << ddsr::markdown_report(report);
    } else if (*recommend) {
      auto p = make_pipeline(common);
      nlohmann::json out = nlohmann::json::array();
      for (const auto& [id, score] : p.recommend(user, top)) out.push_back({{"item_id", id}, {"score", score}});
      std::cout << out.dump() << '\n';
    } else if (*ablate) {
      auto p = make_pipeline(common);
      std::vector<std::pair<std::string, ddsr::MetricSet>> rows;
      for (const auto& r : p.ablate()) rows.emplace_back(r.variant.name, r.report.overall);
      std::cout << ddsr::markdown_table(rows);
    } else if (*run_all) {
      auto p = make_pipeline(common);
      std::cout << ddsr::markdown_report(p.run_all());
    }
  } catch (const ddsr::ConfigError& e) {
    ddsr::logger().error("config: {}", e.what());
    return kConfig;
  } catch (const ddsr::DependencyError& e) {
    ddsr::logger().error("missing dependency: {}", e.what());
    return kDependency;
  } catch (const ddsr::ParseError& e) {
    ddsr::logger().error("input: {}", e.what());
    return kConfig;
  } catch (const nlohmann::json::exception& e) {
    ddsr::logger().error("json: {}", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    ddsr::logger().error("{}", e.what());
    return kRuntime;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
