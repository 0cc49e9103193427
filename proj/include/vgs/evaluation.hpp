#pragma once

// Two-alternative forced-choice testing: the familiar test and the mutual
// exclusivity test, plus multi-seed aggregation.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vgs/data.hpp"
#include "vgs/model.hpp"

namespace vgs {

enum class TestKind { familiar, me };

inline const char* to_string(TestKind k) { return k == TestKind::familiar ? "familiar" : "me"; }
inline TestKind test_kind_from_string(const std::string& s) {
  if (s == "familiar") return TestKind::familiar;
  if (s == "me") return TestKind::me;
  throw std::invalid_argument("unknown test kind: " + s);
}

// One forced-choice trial; indices point into the pack's record table.
// Invariants: all records from the test split, positive matches the query
// class, negative is a different class, both images share a source tag.
// Familiar test: everything familiar. ME test: query/positive novel,
// negative familiar.
struct Episode {
  std::size_t query = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  TestKind kind = TestKind::familiar;
};

struct TestResult {
  TestKind kind = TestKind::familiar;
  Language test_language = Language::none;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> correct;  // per-episode outcome, episode order
  double accuracy = 0;
  std::size_t n_episodes() const { return correct.size(); }
};

// Exactly per_class episodes for every query class of the kind, query audio
// restricted to test_language. Deterministic given the engine state.
std::vector<Episode> sample_episodes(const FeaturePack& pack, TestKind kind, std::size_t per_class,
                                     Language test_language, std::mt19937_64& rng);

// Correct iff the positive image outscores the negative; ties are incorrect.
bool run_episode(const Model& model, const FeaturePack& pack, const Episode& episode);

TestResult evaluate(const Model& model, const FeaturePack& pack, const std::vector<Episode>& episodes);

struct SeedAggregate {
  double mean = 0;
  double stderr_ = 0;  // sample std (n-1) / sqrt(n)
};

SeedAggregate aggregate_seeds(const std::vector<TestResult>& results);

// Table-style "66.2±1.1" formatting of an accuracy aggregate (percent).
std::string format_mean_se(const SeedAggregate& agg);

}  // namespace vgs
