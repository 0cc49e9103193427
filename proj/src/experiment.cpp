#include "vgs/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace vgs {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void reject_unknown_keys(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
}

template <typename T>
void read_into(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::vector<Language> parse_languages(const json& arr, const std::string& where) {
  std::vector<Language> out;
  for (const auto& l : arr) {
    try {
      out.push_back(language_from_string(l.get<std::string>()));
    } catch (const std::invalid_argument& e) {
      throw ConfigError("config: " + where + ": " + e.what());
    }
  }
  return out;
}

SyntheticConfig parse_synthetic(const json& j) {
  reject_unknown_keys(j, {"n_familiar", "n_novel", "languages", "audio_dim", "image_dim",
                          "latent_dim", "audio_frames", "image_frames", "audio_per_class",
                          "images_per_class", "cluster_spread", "language_shift", "frame_noise",
                          "language_map_jitter", "shared_form_fraction", "long_tail", "n_sources",
                          "split_fractions", "seed"},
                      "data.synthetic");
  SyntheticConfig cfg;
  read_into(j, "n_familiar", cfg.n_familiar);
  read_into(j, "n_novel", cfg.n_novel);
  if (j.contains("languages")) cfg.languages = parse_languages(j.at("languages"), "data.synthetic.languages");
  read_into(j, "audio_dim", cfg.audio_dim);
  read_into(j, "image_dim", cfg.image_dim);
  read_into(j, "latent_dim", cfg.latent_dim);
  read_into(j, "audio_frames", cfg.audio_frames);
  read_into(j, "image_frames", cfg.image_frames);
  read_into(j, "audio_per_class", cfg.audio_per_class);
  read_into(j, "images_per_class", cfg.images_per_class);
  read_into(j, "cluster_spread", cfg.cluster_spread);
  read_into(j, "language_shift", cfg.language_shift);
  read_into(j, "frame_noise", cfg.frame_noise);
  read_into(j, "language_map_jitter", cfg.language_map_jitter);
  read_into(j, "shared_form_fraction", cfg.shared_form_fraction);
  read_into(j, "long_tail", cfg.long_tail);
  read_into(j, "n_sources", cfg.n_sources);
  read_into(j, "split_fractions", cfg.split_fractions);
  read_into(j, "seed", cfg.seed);
  return cfg;
}

void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not of the form path.key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw_value = assignment.substr(eq + 1);

  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dotpos = path.find('.', start);
    const std::string key = path.substr(start, dotpos == std::string::npos ? std::string::npos
                                                                           : dotpos - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty path segment");
    if (dotpos == std::string::npos) {
      json value;
      try {
        value = json::parse(raw_value);
      } catch (const json::exception&) {
        value = raw_value;  // plain string
      }
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null())
      throw ConfigError("override '" + assignment + "' descends into a non-object");
    start = dotpos + 1;
  }
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::vector<std::string>& overrides) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  for (const auto& o : overrides) apply_override(root, o);

  reject_unknown_keys(root, {"data", "model", "training", "evaluation", "analysis", "seeds",
                             "output_dir", "jobs"},
                      "the top level");

  ExperimentConfig cfg;

  if (!root.contains("data")) throw ConfigError("config: missing 'data' section");
  const auto& data = root.at("data");
  reject_unknown_keys(data, {"pack", "synthetic"}, "data");
  if (data.contains("pack") == data.contains("synthetic"))
    throw ConfigError("config: data needs exactly one of 'pack' or 'synthetic'");
  if (data.contains("pack")) cfg.pack_path = data.at("pack").get<std::string>();
  if (data.contains("synthetic")) {
    cfg.synthetic = parse_synthetic(data.at("synthetic"));
    try {
      cfg.synthetic->validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }

  std::size_t width = 64;
  std::optional<std::size_t> embed_dim, heads, mlp_dim, audio_input_dim, image_input_dim;
  bool cls_self_attention = false;
  if (root.contains("model")) {
    const auto& model = root.at("model");
    reject_unknown_keys(model, {"width", "embed_dim", "heads", "mlp_dim", "audio_input_dim",
                                "image_input_dim", "scale_init", "cls_self_attention"},
                        "model");
    read_into(model, "width", width);
    if (model.contains("embed_dim")) embed_dim = model.at("embed_dim").get<std::size_t>();
    if (model.contains("heads")) heads = model.at("heads").get<std::size_t>();
    if (model.contains("mlp_dim")) mlp_dim = model.at("mlp_dim").get<std::size_t>();
    if (model.contains("audio_input_dim")) audio_input_dim = model.at("audio_input_dim").get<std::size_t>();
    if (model.contains("image_input_dim")) image_input_dim = model.at("image_input_dim").get<std::size_t>();
    read_into(model, "scale_init", cfg.model.scale_init);
    read_into(model, "cls_self_attention", cls_self_attention);
  }
  // Input dims come from the pack (or the synthetic config) unless pinned.
  std::size_t default_audio_dim = cfg.synthetic ? cfg.synthetic->audio_dim : 768;
  std::size_t default_image_dim = cfg.synthetic ? cfg.synthetic->image_dim : 2048;
  cfg.model.audio = TowerConfig::for_width(audio_input_dim.value_or(default_audio_dim), width);
  cfg.model.image = TowerConfig::for_width(image_input_dim.value_or(default_image_dim), width);
  cfg.model_dims_from_pack = !audio_input_dim && !image_input_dim && !cfg.synthetic;
  for (auto* tower : {&cfg.model.audio, &cfg.model.image}) {
    if (embed_dim) tower->embed_dim = *embed_dim;
    if (heads) tower->heads = *heads;
    if (mlp_dim) tower->mlp_dim = *mlp_dim;
    tower->cls_self_attention = cls_self_attention;
  }

  if (root.contains("training")) {
    const auto& tr = root.at("training");
    reject_unknown_keys(tr, {"epochs", "warmup_epochs", "peak_lr", "final_lr", "batch_size",
                             "negatives", "equalize_steps"},
                        "training");
    read_into(tr, "epochs", cfg.training.epochs);
    read_into(tr, "warmup_epochs", cfg.training.warmup_epochs);
    read_into(tr, "peak_lr", cfg.training.peak_lr);
    read_into(tr, "final_lr", cfg.training.final_lr);
    read_into(tr, "batch_size", cfg.training.batch_size);
    read_into(tr, "negatives", cfg.training.negatives);
    read_into(tr, "equalize_steps", cfg.training.equalize_steps);
  }

  if (root.contains("evaluation")) {
    const auto& ev = root.at("evaluation");
    reject_unknown_keys(ev, {"per_class", "test_languages", "fixed_episodes", "bootstrap_replicates"},
                        "evaluation");
    read_into(ev, "per_class", cfg.evaluation.per_class);
    if (ev.contains("test_languages"))
      cfg.evaluation.test_languages = parse_languages(ev.at("test_languages"), "evaluation.test_languages");
    read_into(ev, "fixed_episodes", cfg.evaluation.fixed_episodes);
    read_into(ev, "bootstrap_replicates", cfg.evaluation.bootstrap_replicates);
  }

  if (root.contains("analysis")) {
    const auto& an = root.at("analysis");
    reject_unknown_keys(an, {"variance", "pca", "translation", "export_embeddings",
                             "bootstrap_replicates", "split", "compare"},
                        "analysis");
    read_into(an, "variance", cfg.analysis.variance);
    read_into(an, "pca", cfg.analysis.pca);
    read_into(an, "translation", cfg.analysis.translation);
    read_into(an, "export_embeddings", cfg.analysis.export_embeddings);
    read_into(an, "bootstrap_replicates", cfg.analysis.bootstrap_replicates);
    if (an.contains("split")) {
      try {
        cfg.analysis.split = split_from_string(an.at("split").get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: analysis.split: ") + e.what());
      }
    }
    if (an.contains("compare")) {
      for (const auto& c : an.at("compare")) {
        reject_unknown_keys(c, {"label", "mono", "bi"}, "analysis.compare[]");
        CompareSpec spec;
        spec.label = c.at("label").get<std::string>();
        spec.mono_results = c.at("mono").get<std::string>();
        spec.bi_results = c.at("bi").get<std::string>();
        cfg.analysis.compare.push_back(std::move(spec));
      }
    }
  }

  if (root.contains("seeds")) {
    cfg.seeds = root.at("seeds").get<std::vector<std::uint64_t>>();
    if (cfg.seeds.empty()) throw ConfigError("config: seeds must not be empty");
  }
  read_into(root, "output_dir", cfg.output_dir);
  read_into(root, "jobs", cfg.jobs);
  if (cfg.jobs < 1) throw ConfigError("config: jobs must be >= 1");

  if (const char* env_root = std::getenv("VGS_OUTPUT_ROOT");
      env_root && *env_root && fs::path(cfg.output_dir).is_relative())
    cfg.output_dir = (fs::path(env_root) / cfg.output_dir).string();

  try {
    cfg.model.validate();
    cfg.training.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (cfg.evaluation.per_class == 0) throw ConfigError("config: evaluation.per_class must be positive");

  // Canonical dump (nlohmann orders object keys) hashed for provenance.
  cfg.config_hash = hex64(fnv1a64(root.dump()));
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment_config(buffer.str(), overrides);
}

std::string pack_dir(const ExperimentConfig& cfg) {
  if (!cfg.pack_path.empty()) return cfg.pack_path;
  return (fs::path(cfg.output_dir) / "pack").string();
}

std::string seed_dir(const ExperimentConfig& cfg, std::uint64_t seed) {
  return (fs::path(cfg.output_dir) / ("seed_" + std::to_string(seed))).string();
}

std::string checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return (fs::path(seed_dir(cfg, seed)) / "checkpoint.ckpt").string();
}

namespace {

FeaturePack load_pack_for(const ExperimentConfig& cfg) {
  const auto dir = pack_dir(cfg);
  if (!fs::exists(fs::path(dir) / "pack.json"))
    throw std::runtime_error("no feature pack at " + dir + " (run gen-data first or set data.pack)");
  return load_feature_pack(dir);
}

ModelConfig resolve_model_config(const ExperimentConfig& cfg, const FeaturePack& pack) {
  ModelConfig model = cfg.model;
  if (cfg.model_dims_from_pack) {
    model.audio.input_dim = pack.audio_dim;
    model.image.input_dim = pack.image_dim;
  }
  if (model.audio.input_dim != pack.audio_dim || model.image.input_dim != pack.image_dim)
    throw std::runtime_error("model input dims (" + std::to_string(model.audio.input_dim) + ", " +
                             std::to_string(model.image.input_dim) + ") do not match pack dims (" +
                             std::to_string(pack.audio_dim) + ", " + std::to_string(pack.image_dim) +
                             ")");
  return model;
}

// Runs fn(seed) for every seed, at most cfg.jobs at a time. The first
// captured exception is rethrown after all workers join.
void for_each_seed(const ExperimentConfig& cfg, const std::function<void(std::uint64_t)>& fn) {
  if (cfg.jobs == 1 || cfg.seeds.size() == 1) {
    for (auto seed : cfg.seeds) fn(seed);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  const std::size_t n_workers = std::min<std::size_t>(cfg.jobs, cfg.seeds.size());
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&] {
      while (true) {
        const std::size_t i = next.fetch_add(1);
        if (i >= cfg.seeds.size()) return;
        try {
          fn(cfg.seeds[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::string run_gen_data(const ExperimentConfig& cfg) {
  if (!cfg.synthetic) throw ConfigError("gen-data: config has no data.synthetic section");
  auto pack = generate_synthetic(*cfg.synthetic);
  const auto dir = pack_dir(cfg);
  write_feature_pack(pack, dir);
  return dir;
}

std::vector<std::string> run_train(const ExperimentConfig& cfg) {
  const auto pack = load_pack_for(cfg);
  const auto model_cfg = resolve_model_config(cfg, pack);

  std::vector<std::string> checkpoints(cfg.seeds.size());
  for_each_seed(cfg, [&](std::uint64_t seed) {
    TrainConfig train_cfg = cfg.training;
    train_cfg.seed = seed;
    auto result = train(pack, model_cfg, train_cfg);

    const auto dir = seed_dir(cfg, seed);
    fs::create_directories(dir);
    const auto ckpt = checkpoint_path(cfg, seed);
    save_checkpoint(result.best_model, ckpt);
    write_history_csv(result.history, (fs::path(dir) / "history.csv").string());

    const auto it = std::find(cfg.seeds.begin(), cfg.seeds.end(), seed);
    checkpoints[std::size_t(it - cfg.seeds.begin())] = ckpt;
  });
  return checkpoints;
}

namespace {

std::uint64_t episode_seed(const ExperimentConfig& cfg, std::uint64_t seed, TestKind kind,
                           Language lang) {
  const std::uint64_t base = cfg.evaluation.fixed_episodes ? 0xF17EDULL : seed;
  return mix_seed(base, (std::uint64_t(kind) << 8) | std::uint64_t(lang));
}

std::string join_languages(const std::vector<Language>& langs) {
  std::string out;
  for (auto l : langs) {
    if (!out.empty()) out += "+";
    out += to_string(l);
  }
  return out;
}

}  // namespace

EvalRunResult run_eval(const ExperimentConfig& cfg) {
  const auto pack = load_pack_for(cfg);
  auto languages = cfg.evaluation.test_languages;
  if (languages.empty()) languages = pack.audio_languages();
  if (languages.empty()) throw std::runtime_error("eval: pack has no audio languages");

  struct Cell {
    std::vector<TestResult> per_seed;
  };
  std::map<std::pair<Language, TestKind>, Cell> cells;
  EvalRunResult out;

  const bool has_novel = !pack.class_names(ClassStatus::novel).empty();
  std::vector<TestKind> kinds{TestKind::familiar};
  if (has_novel) kinds.push_back(TestKind::me);

  std::mutex mu;
  for_each_seed(cfg, [&](std::uint64_t seed) {
    const auto model = load_checkpoint(checkpoint_path(cfg, seed));
    for (auto lang : languages) {
      for (auto kind : kinds) {
        std::mt19937_64 rng(episode_seed(cfg, seed, kind, lang));
        auto episodes = sample_episodes(pack, kind, cfg.evaluation.per_class, lang, rng);
        auto result = evaluate(model, pack, episodes);
        result.seed = seed;
        result.test_language = lang;
        std::lock_guard<std::mutex> lock(mu);
        cells[{lang, kind}].per_seed.push_back(result);
      }
    }
  });

  // Seed-order within each cell must be deterministic regardless of thread
  // finishing order.
  for (auto& [key, cell] : cells)
    std::sort(cell.per_seed.begin(), cell.per_seed.end(),
              [](const TestResult& a, const TestResult& b) { return a.seed < b.seed; });

  const auto eval_dir = fs::path(cfg.output_dir) / "eval";
  fs::create_directories(eval_dir);

  json results_json{{"config_hash", cfg.config_hash},
                    {"pack", pack_dir(cfg)},
                    {"training_languages", json::array()},
                    {"results", json::array()}};
  for (auto l : pack.audio_languages()) results_json["training_languages"].push_back(to_string(l));
  for (auto& [key, cell] : cells) {
    for (auto& r : cell.per_seed) {
      json bits = json::array();
      for (auto b : r.correct) bits.push_back(int(b));
      results_json["results"].push_back({{"seed", r.seed},
                                         {"kind", to_string(r.kind)},
                                         {"language", to_string(r.test_language)},
                                         {"accuracy", r.accuracy},
                                         {"n_episodes", r.n_episodes()},
                                         {"correct", std::move(bits)}});
      out.all.push_back(r);
    }
  }

  // Pooled one-sided bootstrap p-value against the 0.5 no-bias reference.
  if (has_novel) {
    json me_tests = json::array();
    for (auto lang : languages) {
      const auto& per_seed = cells[{lang, TestKind::me}].per_seed;
      std::vector<std::uint8_t> pooled;
      for (const auto& r : per_seed) pooled.insert(pooled.end(), r.correct.begin(), r.correct.end());
      std::mt19937_64 rng(mix_seed(fnv1a64(cfg.config_hash), std::uint64_t(lang)));
      const double p = bootstrap_p_above(pooled, 0.5, cfg.evaluation.bootstrap_replicates, rng);
      me_tests.push_back({{"language", to_string(lang)},
                          {"pooled_accuracy",
                           std::accumulate(pooled.begin(), pooled.end(), 0.0) / double(pooled.size())},
                          {"p_above_chance", p}});
    }
    results_json["me_bias_tests"] = std::move(me_tests);
  }

  out.results_json_path = (eval_dir / "results.json").string();
  std::ofstream jf(out.results_json_path);
  jf << results_json.dump(2) << '\n';

  // Table-shaped summary: one row per test language.
  out.summary_csv_path = (eval_dir / "summary.csv").string();
  std::ofstream csv(out.summary_csv_path);
  csv << "# config_hash=" << cfg.config_hash << "\n";
  csv << "training_languages,test_language,familiar,me,familiar_mean,familiar_se,me_mean,me_se\n";
  const std::string training_langs = join_languages(pack.audio_languages());
  for (auto lang : languages) {
    csv << training_langs << ',' << to_string(lang);
    const auto& fam = cells[{lang, TestKind::familiar}].per_seed;
    std::string fam_fmt = "n/a", me_fmt = "n/a";
    double fam_mean = 0, fam_se = 0, me_mean = 0, me_se = 0;
    if (fam.size() >= 2) {
      const auto agg = aggregate_seeds(fam);
      fam_fmt = format_mean_se(agg);
      fam_mean = agg.mean;
      fam_se = agg.stderr_;
    } else if (fam.size() == 1) {
      fam_mean = fam.front().accuracy;
    }
    if (has_novel) {
      const auto& me = cells[{lang, TestKind::me}].per_seed;
      if (me.size() >= 2) {
        const auto agg = aggregate_seeds(me);
        me_fmt = format_mean_se(agg);
        me_mean = agg.mean;
        me_se = agg.stderr_;
      } else if (me.size() == 1) {
        me_mean = me.front().accuracy;
      }
    }
    csv << ',' << fam_fmt << ',' << me_fmt << ',' << fam_mean << ',' << fam_se << ',' << me_mean << ','
        << me_se << '\n';
  }
  return out;
}

std::vector<TestResult> load_eval_results(const std::string& results_json_path, TestKind kind,
                                          Language language) {
  std::ifstream in(results_json_path);
  if (!in) throw std::runtime_error("eval results: cannot open " + results_json_path);
  json root;
  try {
    in >> root;
  } catch (const json::exception& e) {
    throw std::runtime_error("eval results: malformed JSON in " + results_json_path + ": " + e.what());
  }
  std::vector<TestResult> out;
  for (const auto& r : root.at("results")) {
    if (test_kind_from_string(r.at("kind").get<std::string>()) != kind) continue;
    if (language_from_string(r.at("language").get<std::string>()) != language) continue;
    TestResult tr;
    tr.kind = kind;
    tr.test_language = language;
    tr.seed = r.at("seed").get<std::uint64_t>();
    tr.accuracy = r.at("accuracy").get<double>();
    for (const auto& b : r.at("correct")) tr.correct.push_back(std::uint8_t(b.get<int>()));
    out.push_back(std::move(tr));
  }
  std::sort(out.begin(), out.end(),
            [](const TestResult& a, const TestResult& b) { return a.seed < b.seed; });
  return out;
}

AnalyzeOutputs run_analyze(const ExperimentConfig& cfg, const std::string& checkpoint,
                           std::uint64_t seed_label) {
  const auto pack = load_pack_for(cfg);
  const auto model = load_checkpoint(checkpoint);
  const auto table = compute_embedding_table(model, pack, cfg.analysis.split);
  if (table.rows.empty()) throw std::runtime_error("analyze: no rows in the requested split");

  const auto out_dir = fs::path(cfg.output_dir) / "analysis";
  fs::create_directories(out_dir);
  AnalyzeOutputs outputs;
  const std::string provenance =
      "# config_hash=" + cfg.config_hash + " seed=" + std::to_string(seed_label) + "\n";

  json summary{{"config_hash", cfg.config_hash},
               {"seed", seed_label},
               {"checkpoint", checkpoint},
               {"split", to_string(cfg.analysis.split)}};

  const bool has_novel = !pack.class_names(ClassStatus::novel).empty();

  if (cfg.analysis.variance) {
    outputs.variance_csv = (out_dir / "variance.csv").string();
    std::ofstream csv(outputs.variance_csv);
    csv << provenance;
    csv << "group,modality,statistic,value,ci_lo,ci_hi\n";
    csv.precision(10);
    std::mt19937_64 rng(mix_seed(fnv1a64(cfg.config_hash), 0xC1BA));
    std::vector<ClassStatus> groups{ClassStatus::familiar};
    if (has_novel) groups.push_back(ClassStatus::novel);
    for (auto group : groups) {
      for (auto modality : {Modality::audio, Modality::image}) {
        const auto embs = table.select(modality, group);
        if (embs.empty()) continue;

        const double overall = variance_overall(embs);
        auto overall_ci = bootstrap_ci(
            embs.size(),
            [&](const std::vector<std::size_t>& idx) {
              std::vector<const std::vector<float>*> subset;
              subset.reserve(idx.size());
              for (auto i : idx) subset.push_back(embs[i]);
              return variance_overall(subset);
            },
            cfg.analysis.bootstrap_replicates, 0.95, rng);
        csv << to_string(group) << ',' << to_string(modality) << ",overall," << overall << ','
            << overall_ci.lo << ',' << overall_ci.hi << '\n';

        // Per-class mean variance; bootstrap resamples rows and skips
        // classes that fall under 2 samples in a replicate.
        std::vector<const EmbeddingRow*> rows;
        for (const auto& row : table.rows)
          if (row.modality == modality && row.novel == (group == ClassStatus::novel))
            rows.push_back(&row);
        const auto per_class = variance_per_class(table, group, modality);
        auto per_class_stat = [&](const std::vector<std::size_t>& idx) {
          std::map<std::string, std::vector<const std::vector<float>*>> by_class;
          for (auto i : idx) by_class[rows[i]->class_name].push_back(&rows[i]->embedding);
          double total = 0;
          std::size_t counted = 0;
          for (const auto& [cls, embs_cls] : by_class) {
            if (embs_cls.size() < 2) continue;
            total += variance_overall(embs_cls);
            ++counted;
          }
          return counted ? total / double(counted) : per_class.value;
        };
        auto per_class_ci =
            bootstrap_ci(rows.size(), per_class_stat, cfg.analysis.bootstrap_replicates, 0.95, rng);
        csv << to_string(group) << ',' << to_string(modality) << ",per_class," << per_class.value << ','
            << per_class_ci.lo << ',' << per_class_ci.hi << '\n';
      }
    }
    bool has_audio = false, has_image = false;
    for (const auto& row : table.rows)
      (row.modality == Modality::audio ? has_audio : has_image) = true;
    if (has_audio && has_image) summary["modality_gap"] = modality_gap(table);
  }

  if (cfg.analysis.pca) {
    std::vector<const std::vector<float>*> all_rows;
    for (const auto& row : table.rows) all_rows.push_back(&row.embedding);
    const auto pca = pca_project(all_rows, 2);
    outputs.pca_csv = (out_dir / "pca.csv").string();
    std::ofstream csv(outputs.pca_csv);
    csv << provenance;
    csv << "id,class,modality,language,status";
    for (std::size_t c = 0; c < pca.components; ++c) csv << ",pc" << (c + 1);
    csv << '\n';
    csv.precision(10);
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto& row = table.rows[i];
      csv << row.record_id << ',' << row.class_name << ',' << to_string(row.modality) << ','
          << to_string(row.language) << ',' << (row.novel ? "novel" : "familiar");
      for (std::size_t c = 0; c < pca.components; ++c) csv << ',' << pca.coords[i][c];
      csv << '\n';
    }
    summary["pca_explained_ratio"] = pca.explained_ratio;
    summary["pca_rank_deficient"] = pca.rank_deficient;
  }

  if (cfg.analysis.translation) {
    const auto langs = pack.audio_languages();
    outputs.translation_csv = (out_dir / "translation.csv").string();
    std::ofstream csv(outputs.translation_csv);
    csv << provenance;
    csv << "lang_from,lang_to,group,accuracy,n_samples,skipped_classes\n";
    csv.precision(10);
    for (auto from : langs) {
      for (auto to : langs) {
        if (from == to) continue;
        std::vector<ClassStatus> groups{ClassStatus::familiar};
        if (has_novel) groups.push_back(ClassStatus::novel);
        for (auto group : groups) {
          const auto res = translate_accuracy(table, from, to, group);
          csv << to_string(from) << ',' << to_string(to) << ',' << to_string(group) << ','
              << res.accuracy << ',' << res.n_samples << ',' << res.skipped_classes.size() << '\n';
        }
      }
    }
  }

  if (cfg.analysis.export_embeddings) {
    // Embeddings written in the feature-pack format (one 1 x E frame per
    // record) so external tools can run nonlinear projections.
    FeaturePack export_pack;
    export_pack.audio_dim = table.dim;
    export_pack.image_dim = table.dim;
    export_pack.classes = pack.classes;
    for (const auto& row : table.rows) {
      SampleRecord rec;
      rec.id = row.record_id;
      rec.class_name = row.class_name;
      rec.modality = row.modality;
      rec.language = row.language;
      rec.source = "embedding";
      rec.split = cfg.analysis.split;
      rec.feature_index = export_pack.features.size();
      FeatureSequence seq;
      seq.frames = 1;
      seq.dim = table.dim;
      seq.data = row.embedding;
      export_pack.features.push_back(std::move(seq));
      export_pack.records.push_back(std::move(rec));
    }
    outputs.embeddings_dir = (out_dir / "embeddings").string();
    write_feature_pack(export_pack, outputs.embeddings_dir);
  }

  if (!cfg.analysis.compare.empty()) {
    outputs.comparisons_csv = (out_dir / "comparisons.csv").string();
    std::ofstream csv(outputs.comparisons_csv);
    csv << provenance;
    csv << "# significance: Welch two-sample t-test over per-seed accuracies (stand-in; "
           "the reference comparison method is unnamed)\n";
    csv << "label,language,kind,mono_mean,bi_mean,difference,t,dof,p_value,ci_lo,ci_hi,direction,"
           "significance\n";
    csv.precision(10);
    for (const auto& spec : cfg.analysis.compare) {
      for (auto kind : {TestKind::familiar, TestKind::me}) {
        for (auto lang : {Language::en, Language::fr, Language::nl}) {
          std::vector<TestResult> mono, bi;
          try {
            mono = load_eval_results(spec.mono_results, kind, lang);
            bi = load_eval_results(spec.bi_results, kind, lang);
          } catch (const std::exception&) {
            continue;
          }
          if (mono.size() < 2 || bi.size() < 2) continue;
          const auto cmp = compare_conditions(mono, bi);
          csv << spec.label << ',' << to_string(lang) << ',' << to_string(kind) << ','
              << cmp.mono_mean << ',' << cmp.bi_mean << ',' << cmp.difference << ','
              << cmp.t_statistic << ',' << cmp.dof << ',' << cmp.p_value << ','
              << cmp.difference_ci.lo << ',' << cmp.difference_ci.hi << ',' << cmp.direction << ','
              << cmp.label << '\n';
        }
      }
    }
  }

  outputs.summary_json = (out_dir / "summary.json").string();
  std::ofstream sj(outputs.summary_json);
  sj << summary.dump(2) << '\n';
  return outputs;
}

}  // namespace vgs
