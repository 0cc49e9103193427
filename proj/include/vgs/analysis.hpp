#pragma once

// Embedding-space analyses: variance decomposition, modality gap, PCA
// export, nearest-centroid translation, bootstrap CIs, and seed-level
// condition comparison.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vgs/data.hpp"
#include "vgs/evaluation.hpp"
#include "vgs/model.hpp"

namespace vgs {

struct EmbeddingRow {
  std::string record_id;
  std::string class_name;
  Modality modality = Modality::audio;
  Language language = Language::none;
  bool novel = false;
  std::vector<float> embedding;
};

struct EmbeddingTable {
  std::size_t dim = 0;
  std::vector<EmbeddingRow> rows;

  std::vector<const std::vector<float>*> select(Modality modality, ClassStatus status) const;
};

EmbeddingTable compute_embedding_table(const Model& model, const FeaturePack& pack,
                                       Split split = Split::test);

// Trace of the (1/n) covariance: mean squared distance to the centroid.
double variance_overall(const std::vector<const std::vector<float>*>& embeddings);
double variance_overall(const std::vector<std::vector<float>>& embeddings);

struct PerClassVariance {
  double value = 0;                          // unweighted mean over classes
  std::vector<std::string> skipped_classes;  // classes with < 2 samples
};

PerClassVariance variance_per_class(const EmbeddingTable& table, ClassStatus group, Modality modality);

// Euclidean distance between the audio and image centroids.
double modality_gap(const EmbeddingTable& table);

struct PcaResult {
  std::size_t components = 0;                // may be < k when rank-deficient
  std::vector<std::vector<double>> coords;   // one row per input row
  std::vector<double> explained_ratio;
  bool rank_deficient = false;
};

// Centered projection onto the top-k covariance eigenvectors. Sign
// convention: the largest-magnitude entry of each component is positive.
PcaResult pca_project(const std::vector<const std::vector<float>*>& embeddings, std::size_t k = 2);

struct TranslationResult {
  double accuracy = 0;
  std::size_t n_samples = 0;
  std::vector<std::string> skipped_classes;  // classes missing in lang_to
};

// Nearest mean centroid translation: each lang_from audio sample is assigned
// the class of its closest lang_to audio centroid.
TranslationResult translate_accuracy(const EmbeddingTable& table, Language lang_from, Language lang_to,
                                     ClassStatus group);

struct BootstrapCi {
  double lo = 0, hi = 0;
};

// Percentile interval over statistic(resampled indices). The statistic
// receives indices into [0, n).
BootstrapCi bootstrap_ci(std::size_t n, const std::function<double(const std::vector<std::size_t>&)>& stat,
                         std::size_t replicates, double level, std::mt19937_64& rng);

// Convenience: CI of the mean of a sample.
BootstrapCi bootstrap_ci_mean(const std::vector<double>& values, std::size_t replicates, double level,
                              std::mt19937_64& rng);

// One-sided bootstrap p-value for mean(bits) > reference.
double bootstrap_p_above(const std::vector<std::uint8_t>& bits, double reference,
                         std::size_t replicates, std::mt19937_64& rng);

struct ConditionComparison {
  double mono_mean = 0, bi_mean = 0;
  double difference = 0;  // mono - bi
  double t_statistic = 0;
  double dof = 0;
  double p_value = 1;  // Welch two-sided
  BootstrapCi difference_ci;
  std::string direction;  // "mono>bi", "bi>mono", or "equal"
  std::string label;      // "significant", "directional", or "none"
};

// Welch two-sample t-test over per-seed accuracies plus a bootstrap CI of
// the difference. The unnamed test from the source comparison is stood in
// for by Welch's t; reports flag it as such.
ConditionComparison compare_conditions(const std::vector<TestResult>& mono,
                                       const std::vector<TestResult>& bi);

}  // namespace vgs
