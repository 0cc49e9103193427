#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "vgs/experiment.hpp"

using namespace vgs;
namespace fs = std::filesystem;

namespace {

// Desk-scale config exercising the whole pipeline in seconds.
const char* kTinyConfig = R"json({
  "data": {
    "synthetic": {
      "n_familiar": 4, "n_novel": 2,
      "languages": ["en", "nl"],
      "audio_dim": 12, "image_dim": 16, "latent_dim": 6,
      "audio_frames": [3, 5], "image_frames": [2, 2],
      "audio_per_class": 12, "images_per_class": 18,
      "seed": 11
    }
  },
  "model": { "width": 16, "heads": 2, "scale_init": 10.0 },
  "training": { "epochs": 2, "warmup_epochs": 1, "batch_size": 8, "negatives": 3 },
  "evaluation": { "per_class": 6, "bootstrap_replicates": 50 },
  "analysis": { "bootstrap_replicates": 50 },
  "seeds": [0, 1],
  "output_dir": "test_runs/pipeline"
})json";

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing applies defaults, overrides, and hashes") {
  auto cfg = parse_experiment_config(kTinyConfig);
  CHECK(cfg.model.audio.width == 16);
  CHECK(cfg.model.audio.input_dim == 12);
  CHECK(cfg.model.image.input_dim == 16);
  CHECK(cfg.model.audio.mlp_dim == 64);
  CHECK(cfg.training.epochs == 2);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{0, 1});
  CHECK(cfg.config_hash.size() == 16);

  auto patched = parse_experiment_config(kTinyConfig, {"training.epochs=5", "model.width=32"});
  CHECK(patched.training.epochs == 5);
  CHECK(patched.model.audio.width == 32);
  CHECK(patched.config_hash != cfg.config_hash);

  // Identical content, identical hash.
  CHECK(parse_experiment_config(kTinyConfig).config_hash == cfg.config_hash);
}

TEST_CASE("unknown config keys are rejected everywhere") {
  CHECK_THROWS_WITH_AS(parse_experiment_config(R"({"data": {"pack": "x"}, "bogus": 1})"),
                       doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(R"({"data": {"pack": "x", "extra": 2}})"),
      doctest::Contains("extra"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(R"({"data": {"synthetic": {"n_familia": 3}}})"),
      doctest::Contains("n_familia"), ConfigError);
  CHECK_THROWS_WITH_AS(
      parse_experiment_config(R"({"data": {"pack": "x"}, "training": {"lr": 1}})"),
      doctest::Contains("lr"), ConfigError);
}

TEST_CASE("config validation catches structural mistakes") {
  CHECK_THROWS_AS(parse_experiment_config("not json"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"data": {}})"), ConfigError);
  CHECK_THROWS_AS(
      parse_experiment_config(R"({"data": {"pack": "x", "synthetic": {"n_familiar": 3}}})"),
      ConfigError);
  CHECK_THROWS_AS(parse_experiment_config(R"({"data": {"pack": "x"}, "seeds": []})"), ConfigError);
  CHECK_THROWS_AS(
      parse_experiment_config(R"({"data": {"pack": "x"}, "training": {"epochs": 0}})"),
      ConfigError);
}

TEST_CASE("the output root environment override applies to relative paths") {
  setenv("VGS_OUTPUT_ROOT", "/tmp/vgs_root", 1);
  auto cfg = parse_experiment_config(kTinyConfig);
  CHECK(cfg.output_dir == "/tmp/vgs_root/test_runs/pipeline");
  unsetenv("VGS_OUTPUT_ROOT");
  auto plain = parse_experiment_config(kTinyConfig);
  CHECK(plain.output_dir == "test_runs/pipeline");
}

TEST_CASE("gen-data, train, eval, analyze compose through the filesystem") {
  fs::remove_all("test_runs/pipeline");
  auto cfg = parse_experiment_config(kTinyConfig);

  const auto pack_path = run_gen_data(cfg);
  CHECK(fs::exists(fs::path(pack_path) / "pack.json"));
  CHECK(fs::exists(fs::path(pack_path) / "manifest.jsonl"));
  CHECK(fs::exists(fs::path(pack_path) / "features.f32"));

  const auto checkpoints = run_train(cfg);
  REQUIRE(checkpoints.size() == 2);
  for (const auto& ckpt : checkpoints) CHECK(fs::exists(ckpt));
  CHECK(fs::exists("test_runs/pipeline/seed_0/history.csv"));
  CHECK(fs::exists("test_runs/pipeline/seed_1/history.csv"));

  const auto eval_result = run_eval(cfg);
  CHECK(fs::exists(eval_result.results_json_path));
  CHECK(fs::exists(eval_result.summary_csv_path));
  // 2 seeds x 2 languages x 2 kinds.
  CHECK(eval_result.all.size() == 8);

  const auto summary = read_file(eval_result.summary_csv_path);
  CHECK(summary.find("# config_hash=" + cfg.config_hash) != std::string::npos);
  CHECK(summary.find("en+nl,en") != std::string::npos);
  CHECK(summary.find("en+nl,nl") != std::string::npos);

  const auto results = nlohmann::json::parse(read_file(eval_result.results_json_path));
  CHECK(results.at("config_hash").get<std::string>() == cfg.config_hash);
  CHECK(results.at("results").size() == 8);
  CHECK(results.contains("me_bias_tests"));

  const auto outputs = run_analyze(cfg, checkpoints[0], 0);
  for (const auto& path : {outputs.variance_csv, outputs.pca_csv, outputs.translation_csv,
                           outputs.summary_json}) {
    CHECK(fs::exists(path));
  }
  CHECK(fs::exists(fs::path(outputs.embeddings_dir) / "pack.json"));

  const auto variance = read_file(outputs.variance_csv);
  CHECK(variance.find("# config_hash=" + cfg.config_hash + " seed=0") != std::string::npos);
  // 2 groups x 2 modalities x overall/per_class = 8 bars.
  CHECK(std::count(variance.begin(), variance.end(), '\n') == 2 + 8);

  const auto translation = read_file(outputs.translation_csv);
  CHECK(translation.find("en,nl,familiar") != std::string::npos);
  CHECK(translation.find("nl,en,familiar") != std::string::npos);
  CHECK(translation.find("en,nl,novel") != std::string::npos);

  // The exported embeddings are themselves a loadable pack of 1-frame rows,
  // one per test record.
  const auto exported = load_feature_pack(outputs.embeddings_dir);
  const auto source_pack = load_feature_pack(pack_path);
  std::size_t test_records = 0;
  for (const auto& rec : source_pack.records) test_records += rec.split == Split::test;
  CHECK(exported.records.size() == test_records);
  for (const auto& seq : exported.features) CHECK(seq.frames == 1);
  const auto analysis_summary = nlohmann::json::parse(read_file(outputs.summary_json));
  CHECK(analysis_summary.contains("modality_gap"));
  CHECK(analysis_summary.at("config_hash").get<std::string>() == cfg.config_hash);

  // Re-running eval with the same config reproduces identical metrics.
  const auto again = run_eval(cfg);
  CHECK(read_file(again.results_json_path) == read_file(eval_result.results_json_path));
  CHECK(read_file(again.summary_csv_path) == summary);
}

TEST_CASE("comparisons consume two eval outputs") {
  // Reuse the pipeline artifacts written above; compare the run against
  // itself (difference 0, label none).
  auto cfg = parse_experiment_config(kTinyConfig);
  const auto eval_json = (fs::path(cfg.output_dir) / "eval" / "results.json").string();
  if (!fs::exists(eval_json)) {
    run_gen_data(cfg);
    run_train(cfg);
    run_eval(cfg);
  }

  auto mono = load_eval_results(eval_json, TestKind::me, Language::en);
  REQUIRE(mono.size() == 2);
  CHECK(mono[0].seed == 0);
  CHECK(mono[1].seed == 1);
  CHECK(mono[0].n_episodes() == 12);  // 2 novel classes x 6 per class

  auto cmp = compare_conditions(mono, mono);
  CHECK(cmp.label == "none");

  auto with_compare = parse_experiment_config(
      kTinyConfig, {"analysis.compare=[{\"label\":\"self\",\"mono\":\"" + eval_json +
                    "\",\"bi\":\"" + eval_json + "\"}]"});
  const auto outputs = run_analyze(with_compare, checkpoint_path(with_compare, 0), 0);
  REQUIRE(!outputs.comparisons_csv.empty());
  const auto csv = read_file(outputs.comparisons_csv);
  CHECK(csv.find("self,en,me") != std::string::npos);
  CHECK(csv.find("none") != std::string::npos);
  CHECK(csv.find("Welch") != std::string::npos);
}

TEST_CASE("missing pack paths surface as runtime errors") {
  auto cfg = parse_experiment_config(R"({"data": {"pack": "nonexistent_pack_dir"}})");
  CHECK_THROWS_WITH_AS(run_train(cfg), doctest::Contains("nonexistent_pack_dir"),
                       std::runtime_error);
}
