#include "vgs/data.hpp"

#include <algorithm>
#include <bit>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "feature pack blobs are little-endian float32; big-endian hosts are unsupported");

namespace vgs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kPackFormatVersion = 1;
constexpr const char* kHeaderName = "pack.json";
constexpr const char* kManifestName = "manifest.jsonl";
constexpr const char* kBlobName = "features.f32";

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer over seed ^ salt; gives independent streams.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

const ClassSpec& FeaturePack::class_spec(const std::string& name) const {
  for (const auto& c : classes)
    if (c.name == name) return c;
  throw std::invalid_argument("unknown class: " + name);
}

ClassStatus FeaturePack::class_status(const std::string& name) const {
  return class_spec(name).status;
}

std::vector<Language> FeaturePack::audio_languages() const {
  std::set<Language> langs;
  for (const auto& r : records)
    if (r.modality == Modality::audio && r.language != Language::none) langs.insert(r.language);
  return {langs.begin(), langs.end()};
}

std::vector<std::string> FeaturePack::class_names(ClassStatus status) const {
  std::vector<std::string> names;
  for (const auto& c : classes)
    if (c.status == status) names.push_back(c.name);
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<std::size_t> FeaturePack::find_records(Modality modality, Split split,
                                                   const std::string& class_name,
                                                   Language language) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.modality != modality || r.split != split) continue;
    if (!class_name.empty() && r.class_name != class_name) continue;
    if (language != Language::none && r.language != language) continue;
    out.push_back(i);
  }
  return out;
}

bool FeaturePack::has_split_tags() const {
  for (const auto& r : records)
    if (r.split != Split::unassigned) return true;
  return false;
}

// ---------------------------------------------------------------------------
// Pack IO
// ---------------------------------------------------------------------------

void write_feature_pack(const FeaturePack& pack, const std::string& dir) {
  fs::create_directories(dir);

  std::ofstream blob(fs::path(dir) / kBlobName, std::ios::binary);
  if (!blob) throw std::runtime_error("feature pack: cannot open blob for writing in " + dir);
  std::ofstream manifest(fs::path(dir) / kManifestName);
  if (!manifest) throw std::runtime_error("feature pack: cannot open manifest for writing in " + dir);

  std::uint64_t offset = 0;
  for (const auto& rec : pack.records) {
    const auto& seq = pack.features_of(rec);
    const std::size_t expected_dim = rec.modality == Modality::audio ? pack.audio_dim : pack.image_dim;
    if (seq.dim != expected_dim)
      throw std::invalid_argument("feature pack: record " + rec.id + " has dim " +
                                  std::to_string(seq.dim) + ", pack declares " +
                                  std::to_string(expected_dim));
    if (seq.data.size() != seq.frames * seq.dim)
      throw std::invalid_argument("feature pack: record " + rec.id + " has inconsistent frame data");

    json line{{"id", rec.id},
              {"class", rec.class_name},
              {"modality", to_string(rec.modality)},
              {"language", to_string(rec.language)},
              {"source", rec.source},
              {"split", to_string(rec.split)},
              {"offset", offset},
              {"frames", seq.frames},
              {"dim", seq.dim}};
    manifest << line.dump() << '\n';

    blob.write(reinterpret_cast<const char*>(seq.data.data()),
               static_cast<std::streamsize>(seq.data.size() * sizeof(float)));
    offset += seq.data.size() * sizeof(float);
  }
  manifest.close();
  blob.close();

  json header{{"format_version", kPackFormatVersion},
              {"audio_dim", pack.audio_dim},
              {"image_dim", pack.image_dim},
              {"manifest", kManifestName},
              {"blob", kBlobName},
              {"classes", json::array()}};
  for (const auto& c : pack.classes) {
    json forms = json::object();
    for (const auto& [lang, form] : c.word_forms) forms[to_string(lang)] = form;
    header["classes"].push_back(
        {{"name", c.name}, {"status", to_string(c.status)}, {"word_forms", forms}});
  }
  std::ofstream head(fs::path(dir) / kHeaderName);
  if (!head) throw std::runtime_error("feature pack: cannot open header for writing in " + dir);
  head << header.dump(2) << '\n';
}

FeaturePack load_feature_pack(const std::string& dir) {
  const fs::path base(dir);
  std::ifstream head(base / kHeaderName);
  if (!head) throw std::runtime_error("feature pack: missing " + (base / kHeaderName).string());
  json header;
  try {
    head >> header;
  } catch (const json::exception& e) {
    throw std::runtime_error("feature pack: malformed header in " + dir + ": " + e.what());
  }
  if (!header.contains("format_version") || header["format_version"].get<int>() != kPackFormatVersion)
    throw std::runtime_error("feature pack: unknown format version in " + dir);

  FeaturePack pack;
  pack.audio_dim = header.at("audio_dim").get<std::size_t>();
  pack.image_dim = header.at("image_dim").get<std::size_t>();
  for (const auto& c : header.at("classes")) {
    ClassSpec spec;
    spec.name = c.at("name").get<std::string>();
    spec.status = class_status_from_string(c.at("status").get<std::string>());
    for (const auto& [lang, form] : c.at("word_forms").items())
      spec.word_forms[language_from_string(lang)] = form.get<std::string>();
    pack.classes.push_back(std::move(spec));
  }

  std::ifstream blob_in(base / header.at("blob").get<std::string>(), std::ios::binary | std::ios::ate);
  if (!blob_in) throw std::runtime_error("feature pack: missing blob in " + dir);
  const std::uint64_t blob_size = static_cast<std::uint64_t>(blob_in.tellg());
  blob_in.seekg(0);

  std::ifstream manifest(base / header.at("manifest").get<std::string>());
  if (!manifest) throw std::runtime_error("feature pack: missing manifest in " + dir);

  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("feature pack: malformed manifest line: " + line);
    }
    SampleRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.class_name = j.at("class").get<std::string>();
    rec.modality = modality_from_string(j.at("modality").get<std::string>());
    rec.language = language_from_string(j.at("language").get<std::string>());
    rec.source = j.at("source").get<std::string>();
    rec.split = split_from_string(j.at("split").get<std::string>());

    const std::uint64_t offset = j.at("offset").get<std::uint64_t>();
    FeatureSequence seq;
    seq.frames = j.at("frames").get<std::size_t>();
    seq.dim = j.at("dim").get<std::size_t>();
    const std::size_t expected_dim = rec.modality == Modality::audio ? pack.audio_dim : pack.image_dim;
    if (seq.dim != expected_dim)
      throw std::runtime_error("feature pack: record " + rec.id + " has dim " +
                               std::to_string(seq.dim) + ", pack declares " +
                               std::to_string(expected_dim));
    const std::uint64_t bytes = std::uint64_t(seq.frames) * seq.dim * sizeof(float);
    if (offset + bytes > blob_size)
      throw std::runtime_error("feature pack: record " + rec.id + " lies outside the blob (offset " +
                               std::to_string(offset) + " + " + std::to_string(bytes) + " > " +
                               std::to_string(blob_size) + ")");
    seq.data.resize(seq.frames * seq.dim);
    blob_in.seekg(static_cast<std::streamoff>(offset));
    blob_in.read(reinterpret_cast<char*>(seq.data.data()), static_cast<std::streamsize>(bytes));
    if (!blob_in) throw std::runtime_error("feature pack: short read for record " + rec.id);

    rec.feature_index = pack.features.size();
    pack.features.push_back(std::move(seq));
    pack.records.push_back(std::move(rec));
  }
  return pack;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

void SyntheticConfig::validate() const {
  if (n_familiar < 2) throw std::invalid_argument("synthetic config: need at least 2 familiar classes");
  if (n_novel < 1) throw std::invalid_argument("synthetic config: need at least 1 novel class");
  if (languages.empty()) throw std::invalid_argument("synthetic config: need at least one language");
  for (auto l : languages)
    if (l == Language::none) throw std::invalid_argument("synthetic config: 'none' is not a language");
  if (audio_dim == 0 || image_dim == 0 || latent_dim == 0)
    throw std::invalid_argument("synthetic config: dims must be positive");
  if (audio_frames[0] == 0 || audio_frames[0] > audio_frames[1] || image_frames[0] == 0 ||
      image_frames[0] > image_frames[1])
    throw std::invalid_argument("synthetic config: bad frame ranges");
  if (audio_per_class < 6 || images_per_class < 6)
    throw std::invalid_argument("synthetic config: need at least 6 samples per class per modality "
                                "(2 per split)");
  if (cluster_spread < 0 || language_shift < 0 || frame_noise < 0 || language_map_jitter < 0)
    throw std::invalid_argument("synthetic config: noise magnitudes must be non-negative");
  if (shared_form_fraction < 0 || shared_form_fraction > 1)
    throw std::invalid_argument("synthetic config: shared_form_fraction must lie in [0, 1]");
  if (n_sources < 1) throw std::invalid_argument("synthetic config: need at least one source tag");
  const double total = split_fractions[0] + split_fractions[1] + split_fractions[2];
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("synthetic config: split fractions must sum to 1");
}

namespace {

using Matrix = std::vector<std::vector<double>>;  // rows x cols

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(double(cols)));
  Matrix m(rows, std::vector<double>(cols));
  for (auto& row : m)
    for (auto& v : row) v = dist(rng);
  return m;
}

std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

std::vector<double> apply(const Matrix& m, const std::vector<double>& x) {
  std::vector<double> out(m.size(), 0.0);
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) out[i] += m[i][j] * x[j];
  return out;
}

FeatureSequence make_sequence(const Matrix& map, const std::vector<double>& center,
                              std::size_t frames, double noise, std::mt19937_64& rng) {
  const std::size_t dim = map.size();
  FeatureSequence seq;
  seq.frames = frames;
  seq.dim = dim;
  seq.data.resize(frames * dim);
  const auto base = apply(map, center);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t j = 0; j < dim; ++j)
      seq.data[t * dim + j] = float(base[j] + noise * dist(rng));
  return seq;
}

std::string lang_suffix(Language l) { return std::string(".") + to_string(l); }

std::size_t class_sample_count(std::size_t base, bool long_tail, int rank, int n_classes) {
  if (!long_tail || n_classes <= 1) return base;
  // Geometric decay from base down to base/8 across class ranks.
  const double factor = std::pow(1.0 / 8.0, double(rank) / double(n_classes - 1));
  return std::max<std::size_t>(6, std::size_t(std::lround(double(base) * factor)));
}

}  // namespace

FeaturePack generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed(cfg.seed, 0xDA7A));

  FeaturePack pack;
  pack.audio_dim = cfg.audio_dim;
  pack.image_dim = cfg.image_dim;

  const int n_classes = cfg.n_familiar + cfg.n_novel;

  // Which classes share one word form across all languages.
  std::vector<int> class_order(n_classes);
  std::iota(class_order.begin(), class_order.end(), 0);
  std::shuffle(class_order.begin(), class_order.end(), rng);
  std::vector<bool> shared(n_classes, false);
  const int n_shared = int(std::lround(cfg.shared_form_fraction * n_classes));
  for (int i = 0; i < n_shared; ++i) shared[class_order[i]] = true;

  for (int c = 0; c < n_classes; ++c) {
    ClassSpec spec;
    const bool familiar = c < cfg.n_familiar;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%02d", familiar ? "fam" : "nov", familiar ? c : c - cfg.n_familiar);
    spec.name = buf;
    spec.status = familiar ? ClassStatus::familiar : ClassStatus::novel;
    for (auto lang : cfg.languages)
      spec.word_forms[lang] = shared[c] ? spec.name : spec.name + lang_suffix(lang);
    pack.classes.push_back(std::move(spec));
  }

  // Fixed random rendering maps. The per-language audio maps share a common
  // base so that the same latent renders to correlated acoustics across
  // languages; the jitter term keeps them distinct.
  const Matrix image_map = random_matrix(cfg.image_dim, cfg.latent_dim, rng);
  const Matrix audio_base = random_matrix(cfg.audio_dim, cfg.latent_dim, rng);
  std::map<Language, Matrix> audio_maps;
  for (auto lang : cfg.languages) {
    Matrix m = random_matrix(cfg.audio_dim, cfg.latent_dim, rng);
    for (std::size_t i = 0; i < m.size(); ++i)
      for (std::size_t j = 0; j < m[i].size(); ++j)
        m[i][j] = audio_base[i][j] + cfg.language_map_jitter * m[i][j];
    audio_maps[lang] = std::move(m);
  }

  // Latent concept per class and word-form offset per (language, class).
  std::vector<std::vector<double>> concepts(n_classes);
  std::map<std::pair<Language, int>, std::vector<double>> form_offsets;
  for (int c = 0; c < n_classes; ++c) {
    concepts[c] = random_vector(cfg.latent_dim, rng);
    const auto shared_offset = random_vector(cfg.latent_dim, rng);
    for (auto lang : cfg.languages)
      form_offsets[{lang, c}] = shared[c] ? shared_offset : random_vector(cfg.latent_dim, rng);
  }

  std::uniform_int_distribution<std::size_t> audio_len(cfg.audio_frames[0], cfg.audio_frames[1]);
  std::uniform_int_distribution<std::size_t> image_len(cfg.image_frames[0], cfg.image_frames[1]);

  for (int c = 0; c < n_classes; ++c) {
    const auto& spec = pack.classes[c];
    const bool familiar = c < cfg.n_familiar;
    const int group_rank = familiar ? c : c - cfg.n_familiar;
    const int group_size = familiar ? cfg.n_familiar : cfg.n_novel;
    const std::size_t n_images =
        class_sample_count(cfg.images_per_class, cfg.long_tail, group_rank, group_size);
    for (std::size_t i = 0; i < n_images; ++i) {
      SampleRecord rec;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "img_%s_%04zu", spec.name.c_str(), i);
      rec.id = buf;
      rec.class_name = spec.name;
      rec.modality = Modality::image;
      rec.language = Language::none;
      rec.source = "src" + std::to_string(i % std::size_t(cfg.n_sources));
      rec.feature_index = pack.features.size();
      pack.features.push_back(
          make_sequence(image_map, concepts[c], image_len(rng), cfg.cluster_spread, rng));
      pack.records.push_back(std::move(rec));
    }

    const std::size_t n_audio =
        class_sample_count(cfg.audio_per_class, cfg.long_tail, group_rank, group_size);
    for (auto lang : cfg.languages) {
      std::vector<double> center = concepts[c];
      const auto& offset = form_offsets.at({lang, c});
      for (std::size_t j = 0; j < center.size(); ++j) center[j] += cfg.language_shift * offset[j];
      for (std::size_t i = 0; i < n_audio; ++i) {
        SampleRecord rec;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "aud_%s_%s_%04zu", to_string(lang), spec.name.c_str(), i);
        rec.id = buf;
        rec.class_name = spec.name;
        rec.modality = Modality::audio;
        rec.language = lang;
        rec.source = "src" + std::to_string(i % std::size_t(cfg.n_sources));
        rec.feature_index = pack.features.size();
        pack.features.push_back(
            make_sequence(audio_maps.at(lang), center, audio_len(rng), cfg.frame_noise, rng));
        pack.records.push_back(std::move(rec));
      }
    }
  }

  std::mt19937_64 split_rng(mix_seed(cfg.seed, 0x5117));
  split_dataset(pack, cfg.split_fractions, split_rng);
  return pack;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

void split_dataset(FeaturePack& pack, const std::array<double, 3>& fractions, std::mt19937_64& rng) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("split_dataset: fractions must sum to 1");
  if (pack.has_split_tags())
    throw std::invalid_argument("split_dataset: pack already carries split tags");

  // Strata: (class, modality, language), iterated in a deterministic order.
  std::map<std::tuple<std::string, Modality, Language>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < pack.records.size(); ++i) {
    const auto& r = pack.records[i];
    strata[{r.class_name, r.modality, r.language}].push_back(i);
  }

  for (auto& [key, indices] : strata) {
    const auto& class_name = std::get<0>(key);
    const bool novel = pack.class_status(class_name) == ClassStatus::novel;
    std::shuffle(indices.begin(), indices.end(), rng);
    if (novel) {
      for (auto i : indices) pack.records[i].split = Split::test;
      continue;
    }
    const std::size_t n = indices.size();
    // At least 2 samples per split per stratum; the rounded fractions rule
    // once n is large enough.
    std::size_t n_val = std::max<std::size_t>(2, std::size_t(std::lround(fractions[1] * double(n))));
    std::size_t n_test = std::max<std::size_t>(2, std::size_t(std::lround(fractions[2] * double(n))));
    if (n_val + n_test + 2 > n)
      throw std::invalid_argument("split_dataset: class " + class_name + " (" +
                                  to_string(std::get<1>(key)) + ") has only " + std::to_string(n) +
                                  " samples, too few to stratify");
    const std::size_t n_train = n - n_val - n_test;
    for (std::size_t i = 0; i < n; ++i) {
      auto& rec = pack.records[indices[i]];
      rec.split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    }
  }
}

// ---------------------------------------------------------------------------
// Training batch sampling
// ---------------------------------------------------------------------------

std::size_t epoch_anchor_count(const FeaturePack& pack, const SamplingConfig& cfg, Split split) {
  const auto anchors = pack.find_records(Modality::audio, split);
  if (anchors.empty()) return 0;
  if (!cfg.equalize_steps) return anchors.size();
  const auto langs = pack.audio_languages();
  const std::size_t n_langs = std::max<std::size_t>(1, langs.size());
  return (anchors.size() + n_langs - 1) / n_langs;
}

std::vector<ContrastiveBatch> make_epoch_batches(const FeaturePack& pack, const SamplingConfig& cfg,
                                                 std::uint64_t epoch_seed, Split split) {
  if (cfg.negatives < 1) throw std::invalid_argument("sampling: need at least one negative");
  if (cfg.batch_size < 1) throw std::invalid_argument("sampling: batch size must be positive");

  auto anchors = pack.find_records(Modality::audio, split);
  if (anchors.empty())
    throw std::invalid_argument(std::string("sampling: no audio records in split ") + to_string(split));

  // Per-class positive image pools plus flat negative pools. Negatives are
  // restricted to familiar classes.
  std::map<std::string, std::vector<std::size_t>> images_by_class;
  std::vector<std::size_t> all_images, all_audio;
  for (auto i : pack.find_records(Modality::image, split)) {
    images_by_class[pack.records[i].class_name].push_back(i);
    if (pack.class_status(pack.records[i].class_name) == ClassStatus::familiar) all_images.push_back(i);
  }
  for (auto i : pack.find_records(Modality::audio, split))
    if (pack.class_status(pack.records[i].class_name) == ClassStatus::familiar) all_audio.push_back(i);

  std::set<std::string> anchor_classes;
  for (auto a : anchors) anchor_classes.insert(pack.records[a].class_name);
  for (const auto& cls : anchor_classes) {
    if (pack.class_status(cls) == ClassStatus::novel)
      throw std::invalid_argument("sampling: novel class " + cls + " appears in split " +
                                  to_string(split));
    if (images_by_class.find(cls) == images_by_class.end())
      throw std::invalid_argument("sampling: class " + cls + " has no images in split " +
                                  to_string(split));
  }

  std::mt19937_64 rng(mix_seed(epoch_seed, 0xBA7C));
  std::shuffle(anchors.begin(), anchors.end(), rng);
  anchors.resize(epoch_anchor_count(pack, cfg, split));

  std::vector<ContrastiveBatch> batches;
  ContrastiveBatch current;
  for (auto anchor_idx : anchors) {
    const auto& anchor = pack.records[anchor_idx];
    ContrastiveItem item;
    item.audio_pos = &pack.features_of(anchor);

    const auto& positives = images_by_class.at(anchor.class_name);
    std::uniform_int_distribution<std::size_t> pos_pick(0, positives.size() - 1);
    item.image_pos = &pack.features_of(pack.records[positives[pos_pick(rng)]]);

    auto draw_negatives = [&](const std::vector<std::size_t>& pool,
                              std::vector<const FeatureSequence*>& out) {
      bool has_other_class = false;
      for (auto i : pool)
        if (pack.records[i].class_name != anchor.class_name) {
          has_other_class = true;
          break;
        }
      if (!has_other_class)
        throw std::invalid_argument("sampling: no familiar negatives outside class " +
                                    anchor.class_name);
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      while (out.size() < cfg.negatives) {
        const auto& rec = pack.records[pool[pick(rng)]];
        if (rec.class_name == anchor.class_name) continue;
        out.push_back(&pack.features_of(rec));
      }
    };
    draw_negatives(all_images, item.neg_images);
    draw_negatives(all_audio, item.neg_audios);

    current.items.push_back(std::move(item));
    if (current.items.size() == cfg.batch_size) {
      batches.push_back(std::move(current));
      current = ContrastiveBatch{};
    }
  }
  if (!current.items.empty()) batches.push_back(std::move(current));
  return batches;
}

}  // namespace vgs
