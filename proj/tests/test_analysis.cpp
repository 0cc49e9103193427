#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "testutil.hpp"
#include "vgs/analysis.hpp"

using namespace vgs;

namespace {

std::vector<std::vector<float>> to_rows(std::initializer_list<std::vector<float>> rows) {
  return {rows};
}

EmbeddingRow make_row(std::string cls, Modality m, Language lang, bool novel,
                      std::vector<float> emb) {
  EmbeddingRow row;
  row.record_id = cls + "_" + std::to_string(std::hash<const float*>{}(emb.data()) % 1000);
  row.class_name = std::move(cls);
  row.modality = m;
  row.language = lang;
  row.novel = novel;
  row.embedding = std::move(emb);
  return row;
}

}  // namespace

TEST_CASE("variance_overall anchors") {
  CHECK(variance_overall(to_rows({{2.0f, -3.0f}})) == doctest::Approx(0.0));
  CHECK(variance_overall(to_rows({{-1, 0}, {1, 0}})) == doctest::Approx(1.0));
  CHECK(variance_overall(to_rows({{1, 0}, {0, 1}, {-1, 0}, {0, -1}})) == doctest::Approx(1.0));
  CHECK_THROWS_AS(variance_overall(std::vector<std::vector<float>>{}), std::invalid_argument);
}

TEST_CASE("variance_overall is invariant to translation and rotation") {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> dist(0, 1);
  std::vector<std::vector<float>> rows(20, std::vector<float>(4));
  for (auto& r : rows)
    for (auto& v : r) v = dist(rng);
  const double base = variance_overall(rows);

  auto shifted = rows;
  for (auto& r : shifted) {
    r[0] += 11.5f;
    r[2] -= 3.25f;
  }
  CHECK(variance_overall(shifted) == doctest::Approx(base).epsilon(1e-6));

  // Signed permutations are rotations/reflections.
  auto rotated = rows;
  for (auto& r : rotated) r = {r[2], -r[0], r[3], -r[1]};
  CHECK(variance_overall(rotated) == doctest::Approx(base).epsilon(1e-6));
}

TEST_CASE("per-class variance vs overall variance") {
  EmbeddingTable table;
  table.dim = 2;
  // Two classes, each {(-1,0),(1,0)} shifted far apart.
  for (float x : {-1.0f, 1.0f}) {
    table.rows.push_back(make_row("a", Modality::audio, Language::en, false, {x, 0}));
    table.rows.push_back(make_row("b", Modality::audio, Language::en, false, {x + 10.0f, 0}));
  }
  const auto per_class = variance_per_class(table, ClassStatus::familiar, Modality::audio);
  CHECK(per_class.value == doctest::Approx(1.0));
  CHECK(per_class.skipped_classes.empty());

  std::vector<const std::vector<float>*> all;
  for (const auto& r : table.rows) all.push_back(&r.embedding);
  CHECK(variance_overall(all) > 1.0);

  // Classes that repeat a single point have zero variance.
  EmbeddingTable point_table;
  point_table.dim = 2;
  for (int i = 0; i < 2; ++i) {
    point_table.rows.push_back(make_row("a", Modality::audio, Language::en, false, {1, 1}));
    point_table.rows.push_back(make_row("b", Modality::audio, Language::en, false, {5, -2}));
  }
  CHECK(variance_per_class(point_table, ClassStatus::familiar, Modality::audio).value ==
        doctest::Approx(0.0));
}

TEST_CASE("singleton classes are excluded with a warning") {
  EmbeddingTable table;
  table.dim = 2;
  table.rows.push_back(make_row("lonely", Modality::audio, Language::en, false, {0, 0}));
  table.rows.push_back(make_row("pair", Modality::audio, Language::en, false, {-1, 0}));
  table.rows.push_back(make_row("pair", Modality::audio, Language::en, false, {1, 0}));
  const auto result = variance_per_class(table, ClassStatus::familiar, Modality::audio);
  CHECK(result.value == doctest::Approx(1.0));
  REQUIRE(result.skipped_classes.size() == 1);
  CHECK(result.skipped_classes[0] == "lonely");
}

TEST_CASE("law of total variance: overall >= mean per-class") {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> noise(0, 0.3f);
  EmbeddingTable table;
  table.dim = 3;
  for (int cls = 0; cls < 4; ++cls) {
    for (int i = 0; i < 6; ++i) {
      std::vector<float> emb{float(cls) + noise(rng), noise(rng), noise(rng)};
      table.rows.push_back(make_row("c" + std::to_string(cls), Modality::image, Language::none,
                                    false, std::move(emb)));
    }
  }
  std::vector<const std::vector<float>*> all;
  for (const auto& r : table.rows) all.push_back(&r.embedding);
  const double overall = variance_overall(all);
  const double per_class = variance_per_class(table, ClassStatus::familiar, Modality::image).value;
  CHECK(overall >= per_class - 1e-9);
}

TEST_CASE("modality gap anchors") {
  EmbeddingTable same;
  same.dim = 2;
  same.rows.push_back(make_row("a", Modality::audio, Language::en, false, {0.6f, 0.8f}));
  same.rows.push_back(make_row("a", Modality::image, Language::none, false, {0.6f, 0.8f}));
  CHECK(modality_gap(same) == doctest::Approx(0.0));

  EmbeddingTable antipodal;
  antipodal.dim = 2;
  antipodal.rows.push_back(make_row("a", Modality::audio, Language::en, false, {1, 0}));
  antipodal.rows.push_back(make_row("a", Modality::image, Language::none, false, {-1, 0}));
  CHECK(modality_gap(antipodal) == doctest::Approx(2.0));

  EmbeddingTable audio_only;
  audio_only.dim = 2;
  audio_only.rows.push_back(make_row("a", Modality::audio, Language::en, false, {1, 0}));
  CHECK_THROWS_AS(modality_gap(audio_only), std::invalid_argument);
}

TEST_CASE("pca on collinear points explains everything with one component") {
  std::vector<std::vector<float>> rows;
  for (int i = 0; i < 6; ++i) rows.push_back({float(i), 2.0f * float(i), -float(i)});
  std::vector<const std::vector<float>*> ptrs;
  for (const auto& r : rows) ptrs.push_back(&r);
  const auto pca = pca_project(ptrs, 2);
  CHECK(pca.components == 1);
  CHECK(pca.rank_deficient);
  REQUIRE(pca.explained_ratio.size() == 1);
  CHECK(pca.explained_ratio[0] == doctest::Approx(1.0));
}

TEST_CASE("pca on isotropic axis pairs splits variance evenly") {
  std::vector<std::vector<float>> rows{{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  std::vector<const std::vector<float>*> ptrs;
  for (const auto& r : rows) ptrs.push_back(&r);
  const auto pca = pca_project(ptrs, 2);
  REQUIRE(pca.components == 2);
  CHECK(pca.explained_ratio[0] == doctest::Approx(0.5));
  CHECK(pca.explained_ratio[1] == doctest::Approx(0.5));
}

TEST_CASE("pca preserves distances for data already in a 2-d subspace") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> dist(0, 1);
  // Random plane in R^6 spanned by two orthonormal vectors.
  std::vector<double> u(6), v(6);
  for (auto& x : u) x = dist(rng);
  double nu = 0;
  for (auto x : u) nu += x * x;
  for (auto& x : u) x /= std::sqrt(nu);
  for (auto& x : v) x = dist(rng);
  double uv = 0;
  for (int i = 0; i < 6; ++i) uv += u[i] * v[i];
  for (int i = 0; i < 6; ++i) v[i] -= uv * u[i];
  double nv = 0;
  for (auto x : v) nv += x * x;
  for (auto& x : v) x /= std::sqrt(nv);

  std::vector<std::vector<float>> rows;
  std::vector<std::pair<double, double>> plane_coords;
  for (int i = 0; i < 12; ++i) {
    const double a = dist(rng), b = dist(rng);
    plane_coords.emplace_back(a, b);
    std::vector<float> row(6);
    for (int j = 0; j < 6; ++j) row[j] = float(a * u[j] + b * v[j]);
    rows.push_back(std::move(row));
  }
  std::vector<const std::vector<float>*> ptrs;
  for (const auto& r : rows) ptrs.push_back(&r);
  const auto pca = pca_project(ptrs, 2);
  REQUIRE(pca.components == 2);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      const double orig =
          std::hypot(plane_coords[i].first - plane_coords[j].first,
                     plane_coords[i].second - plane_coords[j].second);
      const double proj = std::hypot(pca.coords[i][0] - pca.coords[j][0],
                                     pca.coords[i][1] - pca.coords[j][1]);
      CHECK(proj == doctest::Approx(orig).epsilon(1e-5));
    }
}

TEST_CASE("pca output is stable under row permutation") {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> dist(0, 1);
  std::vector<std::vector<float>> rows(15, std::vector<float>(4));
  for (auto& r : rows)
    for (auto& v : r) v = dist(rng);

  std::vector<const std::vector<float>*> ptrs;
  for (const auto& r : rows) ptrs.push_back(&r);
  const auto base = pca_project(ptrs, 2);

  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<const std::vector<float>*> shuffled;
  for (auto i : order) shuffled.push_back(&rows[i]);
  const auto permuted = pca_project(shuffled, 2);

  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t c = 0; c < 2; ++c)
      CHECK(permuted.coords[i][c] == doctest::Approx(base.coords[order[i]][c]).epsilon(1e-7));
}

TEST_CASE("self-translation is perfect on separable clusters") {
  std::mt19937_64 rng(13);
  std::normal_distribution<float> noise(0, 0.05f);
  EmbeddingTable table;
  table.dim = 3;
  for (int cls = 0; cls < 4; ++cls) {
    for (int i = 0; i < 8; ++i) {
      std::vector<float> emb(3, 0.0f);
      emb[std::size_t(cls) % 3] = (cls < 3 ? 1.0f : -1.0f) + noise(rng);
      table.rows.push_back(
          make_row("c" + std::to_string(cls), Modality::audio, Language::en, false, std::move(emb)));
    }
  }
  const auto result = translate_accuracy(table, Language::en, Language::en, ClassStatus::familiar);
  CHECK(result.accuracy == doctest::Approx(1.0));
  CHECK(result.n_samples == 32);
}

TEST_CASE("random embeddings translate at roughly the 1/19 chance floor") {
  std::mt19937_64 rng(17);
  std::normal_distribution<float> dist(0, 1);
  EmbeddingTable table;
  table.dim = 16;
  for (int cls = 0; cls < 19; ++cls) {
    for (auto lang : {Language::en, Language::nl}) {
      for (int i = 0; i < 60; ++i) {
        std::vector<float> emb(16);
        float norm = 0;
        for (auto& v : emb) {
          v = dist(rng);
          norm += v * v;
        }
        for (auto& v : emb) v = float(v / std::sqrt(norm));
        table.rows.push_back(
            make_row("n" + std::to_string(cls), Modality::audio, lang, true, std::move(emb)));
      }
    }
  }
  const auto result = translate_accuracy(table, Language::en, Language::nl, ClassStatus::novel);
  CHECK(result.accuracy == doctest::Approx(1.0 / 19.0).epsilon(0.6));
  CHECK(result.accuracy < 0.12);
}

TEST_CASE("classes missing in the target language are skipped with a warning") {
  EmbeddingTable table;
  table.dim = 2;
  for (int i = 0; i < 2; ++i) {
    table.rows.push_back(make_row("shared", Modality::audio, Language::en, false, {1, 0}));
    table.rows.push_back(make_row("shared", Modality::audio, Language::fr, false, {1, 0}));
    table.rows.push_back(make_row("en_only", Modality::audio, Language::en, false, {0, 1}));
  }
  const auto result = translate_accuracy(table, Language::en, Language::fr, ClassStatus::familiar);
  REQUIRE(result.skipped_classes.size() == 1);
  CHECK(result.skipped_classes[0] == "en_only");
  CHECK(result.n_samples == 2);  // only the shared class counts
  CHECK(result.accuracy == doctest::Approx(1.0));
}

TEST_CASE("bootstrap interval on constant input collapses to a point") {
  std::mt19937_64 rng(19);
  const auto ci = bootstrap_ci_mean({3.25, 3.25, 3.25, 3.25}, 200, 0.95, rng);
  CHECK(ci.lo == doctest::Approx(3.25));
  CHECK(ci.hi == doctest::Approx(3.25));
}

TEST_CASE("bootstrap interval contains the point estimate of the mean") {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> dist(2.0, 1.0);
  std::vector<double> values(40);
  for (auto& v : values) v = dist(rng);
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
  const auto ci = bootstrap_ci_mean(values, 1000, 0.95, rng);
  CHECK(ci.lo <= mean);
  CHECK(ci.hi >= mean);
  CHECK(ci.lo < ci.hi);
}

TEST_CASE("bootstrap coverage is close to the nominal level") {
  std::mt19937_64 rng(29);
  std::normal_distribution<double> dist(0.0, 1.0);
  int covered = 0;
  const int trials = 500;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> sample(30);
    for (auto& v : sample) v = dist(rng);
    const auto ci = bootstrap_ci_mean(sample, 400, 0.95, rng);
    covered += (ci.lo <= 0.0 && 0.0 <= ci.hi);
  }
  const double coverage = double(covered) / trials;
  CHECK(coverage > 0.92);
  CHECK(coverage < 0.98);
}

TEST_CASE("bootstrap is deterministic given the seed") {
  std::mt19937_64 rng_a(31), rng_b(31);
  const std::vector<double> values{0.1, 0.9, 0.4, 0.6, 0.5};
  const auto a = bootstrap_ci_mean(values, 300, 0.95, rng_a);
  const auto b = bootstrap_ci_mean(values, 300, 0.95, rng_b);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
}

namespace {

TestResult me_result(double accuracy, std::uint64_t seed) {
  TestResult r;
  r.kind = TestKind::me;
  r.seed = seed;
  r.accuracy = accuracy;
  r.correct.assign(100, 0);
  for (std::size_t i = 0; i < std::size_t(accuracy * 100); ++i) r.correct[i] = 1;
  return r;
}

}  // namespace

TEST_CASE("identical conditions compare as none") {
  std::vector<TestResult> same{me_result(0.65, 0), me_result(0.66, 1), me_result(0.64, 2)};
  const auto cmp = compare_conditions(same, same);
  CHECK(cmp.difference == doctest::Approx(0.0));
  CHECK(cmp.p_value == doctest::Approx(1.0));
  CHECK(cmp.label == "none");
  CHECK(cmp.direction == "equal");
}

TEST_CASE("well-separated conditions compare as significant") {
  std::vector<TestResult> mono, bi;
  for (int i = 0; i < 5; ++i) {
    mono.push_back(me_result(0.70 + 0.001 * i, std::uint64_t(i)));
    bi.push_back(me_result(0.60 + 0.001 * i, std::uint64_t(i)));
  }
  const auto cmp = compare_conditions(mono, bi);
  CHECK(cmp.label == "significant");
  CHECK(cmp.direction == "mono>bi");
  CHECK(cmp.p_value < 0.001);
  CHECK(cmp.difference == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(cmp.difference_ci.lo > 0.05);

  const auto swapped = compare_conditions(bi, mono);
  CHECK(swapped.direction == "bi>mono");
  CHECK(swapped.label == "significant");
  CHECK(swapped.difference == doctest::Approx(-cmp.difference).epsilon(1e-9));
  CHECK(swapped.p_value == doctest::Approx(cmp.p_value).epsilon(1e-9));
}

TEST_CASE("overlapping conditions compare as directional") {
  std::vector<TestResult> mono{me_result(0.66, 0), me_result(0.62, 1), me_result(0.70, 2),
                               me_result(0.58, 3)};
  std::vector<TestResult> bi{me_result(0.65, 0), me_result(0.61, 1), me_result(0.69, 2),
                             me_result(0.57, 3)};
  const auto cmp = compare_conditions(mono, bi);
  CHECK(cmp.direction == "mono>bi");
  CHECK(cmp.label == "directional");
  CHECK(cmp.p_value > 0.05);
}

TEST_CASE("compare_conditions validates its inputs") {
  std::vector<TestResult> one{me_result(0.6, 0)};
  std::vector<TestResult> two{me_result(0.6, 0), me_result(0.61, 1)};
  CHECK_THROWS_AS(compare_conditions(one, two), std::invalid_argument);

  auto fam = me_result(0.9, 0);
  fam.kind = TestKind::familiar;
  std::vector<TestResult> mixed{fam, me_result(0.6, 1)};
  CHECK_THROWS_AS(compare_conditions(mixed, two), std::invalid_argument);
}

TEST_CASE("embedding tables computed from a model are unit norm") {
  const auto pack = generate_synthetic(testutil::tiny_synthetic_config(61));
  ModelConfig cfg;
  cfg.audio = TowerConfig::for_width(pack.audio_dim, 16);
  cfg.image = TowerConfig::for_width(pack.image_dim, 16);
  cfg.audio.heads = cfg.image.heads = 2;
  const auto model = init_model<float>(cfg, 3);
  const auto table = compute_embedding_table(model, pack, Split::test);

  std::size_t expected = 0;
  for (const auto& rec : pack.records) expected += rec.split == Split::test;
  CHECK(table.rows.size() == expected);
  for (const auto& row : table.rows) {
    double norm = 0;
    for (auto v : row.embedding) norm += double(v) * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-5));
  }
}
