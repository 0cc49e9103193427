#pragma once

// Shared test helpers: the central finite-difference gradient oracle and
// small random fixtures. The oracle is independent of the backward pass it
// checks; it only re-runs forward evaluations.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vgs/data.hpp"
#include "vgs/tensor.hpp"

namespace testutil {

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Central differences with step h against the analytic gradients of `leaves`
// for the scalar produced by `forward`. Each call to forward must rebuild
// the graph from the (possibly perturbed) leaf values.
template <typename T>
GradCheckReport grad_check(std::vector<std::pair<std::string, vgs::diff::TensorT<T>*>> leaves,
                           const std::function<vgs::diff::TensorT<T>()>& forward, double h = 1e-5) {
  for (auto& [name, leaf] : leaves) leaf->zero_grad();
  auto loss = forward();
  vgs::diff::backward(loss);
  std::vector<std::vector<T>> analytic;
  analytic.reserve(leaves.size());
  for (auto& [name, leaf] : leaves) analytic.push_back(leaf->grad());

  GradCheckReport report;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto* leaf = leaves[li].second;
    for (std::size_t i = 0; i < leaf->numel(); ++i) {
      const T original = leaf->values()[i];
      leaf->values()[i] = original + T(h);
      const double f_plus = double(forward().item());
      leaf->values()[i] = original - T(h);
      const double f_minus = double(forward().item());
      leaf->values()[i] = original;
      const double fd = (f_plus - f_minus) / (2 * h);
      const double a = double(analytic[li][i]);
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = leaves[li].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

// Float leaves checked against a double finite-difference oracle: the same
// forward graph is mirrored in double with the perturbations applied there.
struct MixedGradCheckReport : GradCheckReport {};

template <typename T>
vgs::diff::TensorT<T> random_tensor(vgs::diff::Shape shape, std::mt19937_64& rng,
                                    bool requires_grad = true, double spread = 1.0) {
  std::normal_distribution<double> dist(0.0, spread);
  std::vector<T> values(vgs::diff::shape_numel(shape));
  for (auto& v : values) v = T(dist(rng));
  return vgs::diff::TensorT<T>::from(std::move(shape), std::move(values), requires_grad);
}

inline vgs::FeatureSequence random_sequence(std::size_t frames, std::size_t dim, std::mt19937_64& rng,
                                            double spread = 1.0) {
  std::normal_distribution<double> dist(0.0, spread);
  vgs::FeatureSequence seq;
  seq.frames = frames;
  seq.dim = dim;
  seq.data.resize(frames * dim);
  for (auto& v : seq.data) v = float(dist(rng));
  return seq;
}

// Small fast synthetic dataset for trainer/eval plumbing tests.
inline vgs::SyntheticConfig tiny_synthetic_config(std::uint64_t seed = 7) {
  vgs::SyntheticConfig cfg;
  cfg.n_familiar = 4;
  cfg.n_novel = 2;
  cfg.audio_dim = 10;
  cfg.image_dim = 14;
  cfg.latent_dim = 5;
  cfg.audio_frames = {3, 5};
  cfg.image_frames = {2, 2};
  cfg.audio_per_class = 10;
  cfg.images_per_class = 12;
  cfg.seed = seed;
  return cfg;
}

}  // namespace testutil
