#include "vgs/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

namespace vgs {

std::vector<const std::vector<float>*> EmbeddingTable::select(Modality modality,
                                                              ClassStatus status) const {
  std::vector<const std::vector<float>*> out;
  for (const auto& row : rows)
    if (row.modality == modality && row.novel == (status == ClassStatus::novel))
      out.push_back(&row.embedding);
  return out;
}

EmbeddingTable compute_embedding_table(const Model& model, const FeaturePack& pack, Split split) {
  auto audio = model.audio.detached_clone();
  auto image = model.image.detached_clone();
  EmbeddingTable table;
  table.dim = model.audio.config.embed_dim;
  for (const auto& rec : pack.records) {
    if (rec.split != split) continue;
    EmbeddingRow row;
    row.record_id = rec.id;
    row.class_name = rec.class_name;
    row.modality = rec.modality;
    row.language = rec.language;
    row.novel = pack.class_status(rec.class_name) == ClassStatus::novel;
    auto emb = embed(rec.modality == Modality::audio ? audio : image, pack.features_of(rec));
    row.embedding.assign(emb.values().begin(), emb.values().end());
    table.rows.push_back(std::move(row));
  }
  return table;
}

namespace {

std::vector<double> centroid(const std::vector<const std::vector<float>*>& embeddings) {
  const std::size_t dim = embeddings.front()->size();
  std::vector<double> mu(dim, 0.0);
  for (const auto* e : embeddings)
    for (std::size_t j = 0; j < dim; ++j) mu[j] += (*e)[j];
  for (auto& v : mu) v /= double(embeddings.size());
  return mu;
}

double squared_distance(const std::vector<float>& x, const std::vector<double>& mu) {
  double d = 0;
  for (std::size_t j = 0; j < mu.size(); ++j) {
    const double diff = double(x[j]) - mu[j];
    d += diff * diff;
  }
  return d;
}

}  // namespace

double variance_overall(const std::vector<const std::vector<float>*>& embeddings) {
  if (embeddings.empty()) throw std::invalid_argument("variance: empty embedding set");
  const auto mu = centroid(embeddings);
  double total = 0;
  for (const auto* e : embeddings) total += squared_distance(*e, mu);
  return total / double(embeddings.size());
}

double variance_overall(const std::vector<std::vector<float>>& embeddings) {
  std::vector<const std::vector<float>*> ptrs;
  ptrs.reserve(embeddings.size());
  for (const auto& e : embeddings) ptrs.push_back(&e);
  return variance_overall(ptrs);
}

PerClassVariance variance_per_class(const EmbeddingTable& table, ClassStatus group, Modality modality) {
  std::map<std::string, std::vector<const std::vector<float>*>> by_class;
  for (const auto& row : table.rows)
    if (row.modality == modality && row.novel == (group == ClassStatus::novel))
      by_class[row.class_name].push_back(&row.embedding);
  if (by_class.empty()) throw std::invalid_argument("variance_per_class: no rows for this group");

  PerClassVariance result;
  double total = 0;
  std::size_t counted = 0;
  for (const auto& [cls, embs] : by_class) {
    if (embs.size() < 2) {
      result.skipped_classes.push_back(cls);
      continue;
    }
    total += variance_overall(embs);
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("variance_per_class: every class has < 2 samples");
  result.value = total / double(counted);
  return result;
}

double modality_gap(const EmbeddingTable& table) {
  std::vector<const std::vector<float>*> audio, image;
  for (const auto& row : table.rows)
    (row.modality == Modality::audio ? audio : image).push_back(&row.embedding);
  if (audio.empty() || image.empty())
    throw std::invalid_argument("modality_gap: need embeddings from both modalities");
  const auto mu_a = centroid(audio);
  const auto mu_i = centroid(image);
  double d = 0;
  for (std::size_t j = 0; j < mu_a.size(); ++j) d += (mu_a[j] - mu_i[j]) * (mu_a[j] - mu_i[j]);
  return std::sqrt(d);
}

PcaResult pca_project(const std::vector<const std::vector<float>*>& embeddings, std::size_t k) {
  const std::size_t n = embeddings.size();
  if (n == 0) throw std::invalid_argument("pca: empty embedding set");
  const std::size_t dim = embeddings.front()->size();
  if (n <= k) throw std::invalid_argument("pca: need more than k samples");

  Eigen::MatrixXd centered(n, dim);
  const auto mu = centroid(embeddings);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j) centered(i, j) = double((*embeddings[i])[j]) - mu[j];

  const Eigen::MatrixXd cov = (centered.transpose() * centered) / double(n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pca: eigendecomposition failed");

  // Eigen returns ascending eigenvalues; walk them from the back.
  const auto& eigenvalues = solver.eigenvalues();
  const auto& eigenvectors = solver.eigenvectors();
  double total_var = 0;
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) total_var += std::max(0.0, eigenvalues[i]);

  const double rank_tol = 1e-12 * std::max(1.0, total_var);
  PcaResult result;
  Eigen::MatrixXd components(dim, 0);
  for (std::size_t c = 0; c < k; ++c) {
    const Eigen::Index idx = Eigen::Index(dim - 1 - c);
    if (idx < 0 || eigenvalues[idx] <= rank_tol) {
      result.rank_deficient = true;
      break;
    }
    Eigen::VectorXd v = eigenvectors.col(idx);
    Eigen::Index argmax = 0;
    v.cwiseAbs().maxCoeff(&argmax);
    if (v[argmax] < 0) v = -v;
    components.conservativeResize(Eigen::NoChange, components.cols() + 1);
    components.col(components.cols() - 1) = v;
    result.explained_ratio.push_back(total_var > 0 ? std::max(0.0, eigenvalues[idx]) / total_var : 0.0);
  }
  result.components = std::size_t(components.cols());

  const Eigen::MatrixXd projected = centered * components;
  result.coords.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    result.coords[i].resize(result.components);
    for (std::size_t c = 0; c < result.components; ++c) result.coords[i][c] = projected(i, Eigen::Index(c));
  }
  return result;
}

TranslationResult translate_accuracy(const EmbeddingTable& table, Language lang_from, Language lang_to,
                                     ClassStatus group) {
  std::map<std::string, std::vector<const std::vector<float>*>> to_pools;
  std::vector<const EmbeddingRow*> from_rows;
  for (const auto& row : table.rows) {
    if (row.modality != Modality::audio || row.novel != (group == ClassStatus::novel)) continue;
    if (row.language == lang_to) to_pools[row.class_name].push_back(&row.embedding);
    if (row.language == lang_from) from_rows.push_back(&row);
  }
  if (from_rows.empty())
    throw std::invalid_argument(std::string("translate: no audio rows in language ") +
                                to_string(lang_from));
  if (to_pools.empty())
    throw std::invalid_argument(std::string("translate: no audio rows in language ") +
                                to_string(lang_to));

  std::map<std::string, std::vector<double>> centroids;
  for (const auto& [cls, embs] : to_pools) centroids[cls] = centroid(embs);

  TranslationResult result;
  std::set<std::string> from_classes;
  for (const auto* row : from_rows) from_classes.insert(row->class_name);
  for (const auto& cls : from_classes)
    if (!centroids.count(cls)) result.skipped_classes.push_back(cls);

  std::size_t n_correct = 0;
  for (const auto* row : from_rows) {
    if (!centroids.count(row->class_name)) continue;  // skipped class
    double best = std::numeric_limits<double>::infinity();
    const std::string* best_class = nullptr;
    for (const auto& [cls, mu] : centroids) {
      const double d = squared_distance(row->embedding, mu);
      if (d < best) {
        best = d;
        best_class = &cls;
      }
    }
    n_correct += (*best_class == row->class_name);
    ++result.n_samples;
  }
  if (result.n_samples == 0) throw std::invalid_argument("translate: no classes shared between languages");
  result.accuracy = double(n_correct) / double(result.n_samples);
  return result;
}

BootstrapCi bootstrap_ci(std::size_t n, const std::function<double(const std::vector<std::size_t>&)>& stat,
                         std::size_t replicates, double level, std::mt19937_64& rng) {
  if (n == 0) throw std::invalid_argument("bootstrap: empty sample");
  if (replicates == 0 || level <= 0 || level >= 1)
    throw std::invalid_argument("bootstrap: bad replicates or level");
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<double> stats(replicates);
  std::vector<std::size_t> idx(n);
  for (std::size_t r = 0; r < replicates; ++r) {
    for (auto& i : idx) i = pick(rng);
    stats[r] = stat(idx);
  }
  std::sort(stats.begin(), stats.end());
  // Interpolated percentile (type 7).
  auto quantile = [&](double q) {
    const double pos = q * double(replicates - 1);
    const std::size_t lo = std::size_t(pos);
    const std::size_t hi = std::min(lo + 1, replicates - 1);
    const double frac = pos - double(lo);
    return stats[lo] * (1 - frac) + stats[hi] * frac;
  };
  const double alpha = 1 - level;
  return {quantile(alpha / 2), quantile(1 - alpha / 2)};
}

BootstrapCi bootstrap_ci_mean(const std::vector<double>& values, std::size_t replicates, double level,
                              std::mt19937_64& rng) {
  return bootstrap_ci(
      values.size(),
      [&](const std::vector<std::size_t>& idx) {
        double s = 0;
        for (auto i : idx) s += values[i];
        return s / double(idx.size());
      },
      replicates, level, rng);
}

double bootstrap_p_above(const std::vector<std::uint8_t>& bits, double reference,
                         std::size_t replicates, std::mt19937_64& rng) {
  if (bits.empty()) throw std::invalid_argument("bootstrap: empty sample");
  std::uniform_int_distribution<std::size_t> pick(0, bits.size() - 1);
  std::size_t at_or_below = 0;
  for (std::size_t r = 0; r < replicates; ++r) {
    std::size_t ones = 0;
    for (std::size_t i = 0; i < bits.size(); ++i) ones += bits[pick(rng)];
    const double mean = double(ones) / double(bits.size());
    at_or_below += (mean <= reference);
  }
  return double(at_or_below + 1) / double(replicates + 1);
}

ConditionComparison compare_conditions(const std::vector<TestResult>& mono,
                                       const std::vector<TestResult>& bi) {
  if (mono.size() < 2 || bi.size() < 2)
    throw std::invalid_argument("compare: need at least 2 seeds per condition");
  for (const auto& r : mono)
    if (r.kind != bi.front().kind) throw std::invalid_argument("compare: mismatched test kinds");
  for (const auto& r : bi)
    if (r.kind != mono.front().kind) throw std::invalid_argument("compare: mismatched test kinds");

  auto accuracies = [](const std::vector<TestResult>& results) {
    std::vector<double> out;
    out.reserve(results.size());
    for (const auto& r : results) out.push_back(r.accuracy);
    return out;
  };
  const auto xs = accuracies(mono);
  const auto ys = accuracies(bi);
  auto mean_of = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
  };
  auto var_of = [&](const std::vector<double>& v, double mu) {
    double ss = 0;
    for (auto x : v) ss += (x - mu) * (x - mu);
    return ss / double(v.size() - 1);
  };

  ConditionComparison cmp;
  cmp.mono_mean = mean_of(xs);
  cmp.bi_mean = mean_of(ys);
  cmp.difference = cmp.mono_mean - cmp.bi_mean;

  const double vx = var_of(xs, cmp.mono_mean), vy = var_of(ys, cmp.bi_mean);
  const double nx = double(xs.size()), ny = double(ys.size());
  const double se2 = vx / nx + vy / ny;
  if (se2 > 0) {
    cmp.t_statistic = cmp.difference / std::sqrt(se2);
    cmp.dof = se2 * se2 / (vx * vx / (nx * nx * (nx - 1)) + vy * vy / (ny * ny * (ny - 1)));
    boost::math::students_t dist(cmp.dof);
    cmp.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(cmp.t_statistic)));
  } else {
    // Zero spread in both samples: degenerate Welch.
    cmp.t_statistic = cmp.difference == 0 ? 0 : std::numeric_limits<double>::infinity();
    cmp.dof = nx + ny - 2;
    cmp.p_value = cmp.difference == 0 ? 1.0 : 0.0;
  }

  // Independent resampling of the two seed sets.
  std::mt19937_64 rng(0xC0317A57);
  std::uniform_int_distribution<std::size_t> pick_x(0, xs.size() - 1), pick_y(0, ys.size() - 1);
  std::vector<double> diffs(1000);
  for (auto& d : diffs) {
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) sx += xs[pick_x(rng)];
    for (std::size_t i = 0; i < ys.size(); ++i) sy += ys[pick_y(rng)];
    d = sx / nx - sy / ny;
  }
  std::sort(diffs.begin(), diffs.end());
  cmp.difference_ci = {diffs[std::size_t(0.025 * double(diffs.size() - 1))],
                       diffs[std::size_t(std::ceil(0.975 * double(diffs.size() - 1)))]};

  constexpr double kTiny = 1e-12;
  cmp.direction = std::abs(cmp.difference) <= kTiny ? "equal"
                  : cmp.difference > 0               ? "mono>bi"
                                                     : "bi>mono";
  cmp.label = std::abs(cmp.difference) <= kTiny ? "none"
              : cmp.p_value < 0.05              ? "significant"
                                                : "directional";
  return cmp;
}

}  // namespace vgs
