#pragma once

// Config-driven experiment surface: one JSON config fully determines a run.
// The CLI subcommands are thin wrappers over the run_* functions here.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vgs/analysis.hpp"
#include "vgs/data.hpp"
#include "vgs/evaluation.hpp"
#include "vgs/trainer.hpp"

namespace vgs {

// Bad flags or config content; maps to exit code 1 (runtime failures are 2).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct EvalConfig {
  std::size_t per_class = 50;
  std::vector<Language> test_languages;  // empty = all languages in the pack
  bool fixed_episodes = false;
  std::size_t bootstrap_replicates = 1000;
};

struct CompareSpec {
  std::string label;
  std::string mono_results;  // path to an eval results.json
  std::string bi_results;
};

struct AnalysisConfig {
  bool variance = true;
  bool pca = true;
  bool translation = true;
  bool export_embeddings = true;
  std::size_t bootstrap_replicates = 1000;
  Split split = Split::test;
  std::vector<CompareSpec> compare;
};

struct ExperimentConfig {
  std::string pack_path;  // empty when synthetic
  std::optional<SyntheticConfig> synthetic;
  ModelConfig model;
  bool model_dims_from_pack = true;  // input dims resolved from the pack unless given
  TrainConfig training;
  EvalConfig evaluation;
  AnalysisConfig analysis;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::string output_dir = "runs/out";
  int jobs = 1;

  std::string config_hash;  // FNV-1a of the canonical JSON, set by parsing
};

// Parses and validates a config file; unknown keys are rejected. `overrides`
// are dot-path assignments like training.epochs=2 applied before validation.
ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides = {});
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::vector<std::string>& overrides = {});

std::uint64_t fnv1a64(const std::string& text);

// Resolved locations inside the output directory.
std::string pack_dir(const ExperimentConfig& cfg);
std::string seed_dir(const ExperimentConfig& cfg, std::uint64_t seed);
std::string checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed);

// gen-data: writes the synthetic pack to <output_dir>/pack.
std::string run_gen_data(const ExperimentConfig& cfg);

// train: one checkpoint + history CSV per seed; returns checkpoint paths.
std::vector<std::string> run_train(const ExperimentConfig& cfg);

struct EvalRunResult {
  // results[language][kind] per seed, in seed order.
  std::vector<TestResult> all;
  std::string results_json_path;
  std::string summary_csv_path;
};

EvalRunResult run_eval(const ExperimentConfig& cfg);

struct AnalyzeOutputs {
  std::string variance_csv;
  std::string pca_csv;
  std::string translation_csv;
  std::string summary_json;
  std::string embeddings_dir;
  std::string comparisons_csv;
};

AnalyzeOutputs run_analyze(const ExperimentConfig& cfg, const std::string& checkpoint,
                           std::uint64_t seed_label);

// Per-seed TestResults reconstructed from an eval results.json.
std::vector<TestResult> load_eval_results(const std::string& results_json_path, TestKind kind,
                                          Language language);

}  // namespace vgs
