#pragma once

// Dataset model: on-disk feature packs, the synthetic bilingual generator,
// splits, and training batch sampling.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vgs/feature.hpp"
#include "vgs/objective.hpp"

namespace vgs {

struct FeaturePack {
  std::size_t audio_dim = 0;
  std::size_t image_dim = 0;
  std::vector<ClassSpec> classes;
  std::vector<SampleRecord> records;
  std::vector<FeatureSequence> features;

  const ClassSpec& class_spec(const std::string& name) const;
  ClassStatus class_status(const std::string& name) const;
  const FeatureSequence& features_of(const SampleRecord& rec) const { return features[rec.feature_index]; }

  std::vector<Language> audio_languages() const;
  std::vector<std::string> class_names(ClassStatus status) const;

  // Record indices matching all given filters; language filter applies to
  // audio records only when `language` != none.
  std::vector<std::size_t> find_records(Modality modality, Split split,
                                        const std::string& class_name = "",
                                        Language language = Language::none) const;
  bool has_split_tags() const;
};

// On-disk layout: <dir>/pack.json (header), <dir>/manifest.jsonl (one record
// per line), <dir>/features.f32 (little-endian float32 blob).
void write_feature_pack(const FeaturePack& pack, const std::string& dir);
FeaturePack load_feature_pack(const std::string& dir);

struct SyntheticConfig {
  int n_familiar = 13;
  int n_novel = 19;
  std::vector<Language> languages = {Language::en};
  std::size_t audio_dim = 64;
  std::size_t image_dim = 96;
  std::size_t latent_dim = 8;
  std::array<std::size_t, 2> audio_frames = {6, 10};  // T range, inclusive
  std::array<std::size_t, 2> image_frames = {4, 4};
  std::size_t audio_per_class = 30;  // per language
  std::size_t images_per_class = 48;
  double cluster_spread = 0.35;   // image frame noise around the class concept
  // Latent offset separating word forms across languages. Must stay well
  // below the typical concept spacing (~sqrt(2*latent_dim)) so same-class
  // centroids remain nearest cross-lingual neighbours.
  double language_shift = 0.35;
  double frame_noise = 0.35;      // audio frame noise
  double language_map_jitter = 0.1;  // per-language perturbation of the audio map
  double shared_form_fraction = 0.2; // classes whose word form is identical in all languages
  bool long_tail = false;
  int n_sources = 3;
  std::array<double, 3> split_fractions = {0.8, 0.1, 0.1};
  std::uint64_t seed = 0;

  void validate() const;
};

// Desk-scale stand-in for the speech--image corpora: every class gets a
// latent concept, images are noisy linear renderings of it, and audio for
// each language renders the concept plus a per-language word-form offset, so
// word forms of one class are acoustically distinct across languages while
// staying visually co-grounded. Deterministic given the seed.
FeaturePack generate_synthetic(const SyntheticConfig& cfg);

// Stratified train/val/test assignment by (class, modality, language).
// Novel classes go entirely to test. Only valid on packs without split tags.
void split_dataset(FeaturePack& pack, const std::array<double, 3>& fractions, std::mt19937_64& rng);

struct SamplingConfig {
  std::size_t batch_size = 32;
  std::size_t negatives = 11;  // per modality
  bool equalize_steps = false;
};

// All train audio anchors once each, in a seed-determined shuffled order,
// grouped into batches. Every anchor gets one same-class positive image and
// `negatives` other-class images + audios, sampled independently.
std::vector<ContrastiveBatch> make_epoch_batches(const FeaturePack& pack, const SamplingConfig& cfg,
                                                 std::uint64_t epoch_seed, Split split = Split::train);

// Anchor count per epoch under the sampling config (drives the lr schedule).
std::size_t epoch_anchor_count(const FeaturePack& pack, const SamplingConfig& cfg,
                               Split split = Split::train);

}  // namespace vgs
