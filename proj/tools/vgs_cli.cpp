// Command-line surface: gen-data, train, eval, analyze. One JSON config
// drives everything; --set applies dot-path overrides. Exit codes: 0 ok,
// 1 usage/config error, 2 runtime error.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vgs/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "experiment config JSON")->required();
  cmd->add_option("--set", args.overrides,
                  "dot-path config override, e.g. --set training.epochs=2 (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-modal contrastive learning engine and experiment harness"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, analyze_args;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic feature pack");
  add_common(gen, gen_args);
  auto* train = app.add_subcommand("train", "train one model per seed");
  add_common(train, train_args);
  auto* eval = app.add_subcommand("eval", "run the familiar and ME tests per seed");
  add_common(eval, eval_args);
  auto* analyze = app.add_subcommand("analyze", "embedding-space analyses for one checkpoint");
  add_common(analyze, analyze_args);
  std::string checkpoint_override;
  std::uint64_t analyze_seed = 0;
  bool analyze_seed_given = false;
  analyze->add_option("--checkpoint", checkpoint_override, "checkpoint path (default: first seed's)");
  analyze->add_option("--seed", analyze_seed, "seed label for the analysis outputs")
      ->each([&](const std::string&) { analyze_seed_given = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      const auto cfg = vgs::load_experiment_config(gen_args.config_path, gen_args.overrides);
      const auto dir = vgs::run_gen_data(cfg);
      std::cout << "wrote feature pack to " << dir << "\n";
    } else if (train->parsed()) {
      const auto cfg = vgs::load_experiment_config(train_args.config_path, train_args.overrides);
      const auto checkpoints = vgs::run_train(cfg);
      for (std::size_t i = 0; i < checkpoints.size(); ++i)
        std::cout << "seed " << cfg.seeds[i] << ": " << checkpoints[i] << "\n";
    } else if (eval->parsed()) {
      const auto cfg = vgs::load_experiment_config(eval_args.config_path, eval_args.overrides);
      const auto result = vgs::run_eval(cfg);
      std::cout << "results: " << result.results_json_path << "\n"
                << "summary: " << result.summary_csv_path << "\n";
    } else if (analyze->parsed()) {
      const auto cfg = vgs::load_experiment_config(analyze_args.config_path, analyze_args.overrides);
      const std::uint64_t seed = analyze_seed_given ? analyze_seed : cfg.seeds.front();
      const std::string ckpt =
          checkpoint_override.empty() ? vgs::checkpoint_path(cfg, seed) : checkpoint_override;
      const auto outputs = vgs::run_analyze(cfg, ckpt, seed);
      if (!outputs.variance_csv.empty()) std::cout << "variance: " << outputs.variance_csv << "\n";
      if (!outputs.pca_csv.empty()) std::cout << "pca: " << outputs.pca_csv << "\n";
      if (!outputs.translation_csv.empty())
        std::cout << "translation: " << outputs.translation_csv << "\n";
      if (!outputs.embeddings_dir.empty())
        std::cout << "embeddings: " << outputs.embeddings_dir << "\n";
      if (!outputs.comparisons_csv.empty())
        std::cout << "comparisons: " << outputs.comparisons_csv << "\n";
      std::cout << "summary: " << outputs.summary_json << "\n";
    }
  } catch (const vgs::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
