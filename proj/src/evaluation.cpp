#include "vgs/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>

namespace vgs {

namespace {

// Test-split image indices grouped by class and source tag.
struct ImagePools {
  std::map<std::string, std::map<std::string, std::vector<std::size_t>>> by_class_source;

  static ImagePools build(const FeaturePack& pack) {
    ImagePools pools;
    for (auto i : pack.find_records(Modality::image, Split::test)) {
      const auto& r = pack.records[i];
      pools.by_class_source[r.class_name][r.source].push_back(i);
    }
    return pools;
  }

  const std::map<std::string, std::vector<std::size_t>>* sources_of(const std::string& cls) const {
    auto it = by_class_source.find(cls);
    return it == by_class_source.end() ? nullptr : &it->second;
  }
};

}  // namespace

std::vector<Episode> sample_episodes(const FeaturePack& pack, TestKind kind, std::size_t per_class,
                                     Language test_language, std::mt19937_64& rng) {
  if (per_class == 0) throw std::invalid_argument("episodes: per_class must be positive");
  const auto query_classes =
      pack.class_names(kind == TestKind::familiar ? ClassStatus::familiar : ClassStatus::novel);
  const auto negative_classes = pack.class_names(ClassStatus::familiar);
  if (query_classes.empty()) throw std::invalid_argument("episodes: no query classes of this kind");
  const auto pools = ImagePools::build(pack);

  std::vector<Episode> episodes;
  episodes.reserve(query_classes.size() * per_class);
  for (const auto& query_class : query_classes) {
    const auto query_audio = pack.find_records(Modality::audio, Split::test, query_class, test_language);
    if (query_audio.empty())
      throw std::invalid_argument("episodes: no test audio for class " + query_class + " in language " +
                                  to_string(test_language));
    const auto* query_sources = pools.sources_of(query_class);
    if (!query_sources)
      throw std::invalid_argument("episodes: no test images for class " + query_class);

    // Negative classes that can supply a same-source image pair.
    std::vector<std::string> eligible;
    for (const auto& neg_class : negative_classes) {
      if (neg_class == query_class) continue;
      const auto* neg_sources = pools.sources_of(neg_class);
      if (!neg_sources) continue;
      for (const auto& [source, images] : *query_sources)
        if (neg_sources->count(source)) {
          eligible.push_back(neg_class);
          break;
        }
    }
    if (eligible.empty())
      throw std::invalid_argument("episodes: no same-source negative images available for class " +
                                  query_class);

    for (std::size_t e = 0; e < per_class; ++e) {
      Episode ep;
      ep.kind = kind;
      std::uniform_int_distribution<std::size_t> audio_pick(0, query_audio.size() - 1);
      ep.query = query_audio[audio_pick(rng)];

      std::uniform_int_distribution<std::size_t> class_pick(0, eligible.size() - 1);
      const auto& neg_class = eligible[class_pick(rng)];
      const auto* neg_sources = pools.sources_of(neg_class);

      // Positive first, uniform over query-class test images whose source the
      // negative class can match.
      std::vector<std::size_t> positive_pool;
      for (const auto& [source, images] : *query_sources)
        if (neg_sources->count(source))
          positive_pool.insert(positive_pool.end(), images.begin(), images.end());
      std::uniform_int_distribution<std::size_t> pos_pick(0, positive_pool.size() - 1);
      ep.positive = positive_pool[pos_pick(rng)];

      const auto& neg_pool = neg_sources->at(pack.records[ep.positive].source);
      std::uniform_int_distribution<std::size_t> neg_pick(0, neg_pool.size() - 1);
      ep.negative = neg_pool[neg_pick(rng)];
      episodes.push_back(ep);
    }
  }
  return episodes;
}

bool run_episode(const Model& model, const FeaturePack& pack, const Episode& episode) {
  auto audio = model.audio.detached_clone();
  auto image = model.image.detached_clone();
  const auto query = embed_vector(audio, pack.features_of(pack.records[episode.query]), Modality::audio);
  const auto pos = embed_vector(image, pack.features_of(pack.records[episode.positive]), Modality::image);
  const auto neg = embed_vector(image, pack.features_of(pack.records[episode.negative]), Modality::image);
  return score(query, pos) > score(query, neg);
}

TestResult evaluate(const Model& model, const FeaturePack& pack, const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("evaluate: no episodes");
  auto audio = model.audio.detached_clone();
  auto image = model.image.detached_clone();

  // Each record is embedded once; episodes then reduce to dot products.
  std::unordered_map<std::size_t, std::vector<float>> cache;
  auto embedding_of = [&](std::size_t record_idx) -> const std::vector<float>& {
    auto it = cache.find(record_idx);
    if (it != cache.end()) return it->second;
    const auto& rec = pack.records[record_idx];
    const auto& params_for = rec.modality == Modality::audio ? audio : image;
    auto emb = embed(params_for, pack.features_of(rec));
    return cache.emplace(record_idx, std::vector<float>(emb.values().begin(), emb.values().end()))
        .first->second;
  };

  TestResult result;
  result.kind = episodes.front().kind;
  result.test_language = pack.records[episodes.front().query].language;
  result.correct.reserve(episodes.size());
  std::size_t n_correct = 0;
  for (const auto& ep : episodes) {
    const auto& q = embedding_of(ep.query);
    const bool ok = score(q, embedding_of(ep.positive)) > score(q, embedding_of(ep.negative));
    result.correct.push_back(ok ? 1 : 0);
    n_correct += ok;
  }
  result.accuracy = double(n_correct) / double(episodes.size());
  return result;
}

SeedAggregate aggregate_seeds(const std::vector<TestResult>& results) {
  if (results.size() < 2) throw std::invalid_argument("aggregate: need at least 2 seeds");
  for (const auto& r : results)
    if (r.kind != results.front().kind)
      throw std::invalid_argument("aggregate: mixed test kinds");
  SeedAggregate agg;
  for (const auto& r : results) agg.mean += r.accuracy;
  agg.mean /= double(results.size());
  double ss = 0;
  for (const auto& r : results) ss += (r.accuracy - agg.mean) * (r.accuracy - agg.mean);
  const double sample_var = ss / double(results.size() - 1);
  agg.stderr_ = std::sqrt(sample_var / double(results.size()));
  return agg;
}

std::string format_mean_se(const SeedAggregate& agg) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f±%.1f", 100.0 * agg.mean, 100.0 * agg.stderr_);
  return buf;
}

}  // namespace vgs
