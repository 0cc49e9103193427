#pragma once

// Bidirectional contrastive (InfoNCE) objective with a learnable, capped
// temperature multiplier.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "vgs/encoder.hpp"
#include "vgs/feature.hpp"
#include "vgs/tensor.hpp"

namespace vgs {

// One learnable positive scalar s applied as s * phi inside the softmax.
// The multiplier is capped at 100; the cap is enforced both in the graph
// (clamp with zero gradient past the cap) and by projecting the raw value
// after every optimizer step. Initialized to 1/0.07.
template <typename T>
struct LogitScaleT {
  static constexpr double kMax = 100.0;
  static constexpr double kMin = 1e-4;
  static constexpr double kDefaultInit = 14.285;

  diff::TensorT<T> s;

  static LogitScaleT init(double value = kDefaultInit, bool requires_grad = true) {
    LogitScaleT scale;
    scale.s = diff::TensorT<T>::scalar(T(value), requires_grad);
    return scale;
  }

  // Clamped multiplier as a graph node.
  diff::TensorT<T> effective() const { return diff::clamp(s, T(kMin), T(kMax)); }

  // Raw value clamped for plain-float evaluation paths.
  T value() const { return std::min(std::max(s.item(), T(kMin)), T(kMax)); }

  LogitScaleT detached_clone() const {
    LogitScaleT out;
    out.s = diff::TensorT<T>::scalar(s.item(), false);
    return out;
  }
};

using LogitScale = LogitScaleT<float>;

// Projects the raw parameter onto (0, 100]; call after every optimizer step.
template <typename T>
void clamp_scale(LogitScaleT<T>& scale) {
  T& raw = scale.s.values()[0];
  raw = std::min(std::max(raw, T(LogitScaleT<T>::kMin)), T(LogitScaleT<T>::kMax));
}

// One anchor: matched audio/image pair plus independently sampled negatives
// for each modality. Pointers are non-owning views into a feature pack.
struct ContrastiveItem {
  const FeatureSequence* audio_pos = nullptr;
  const FeatureSequence* image_pos = nullptr;
  std::vector<const FeatureSequence*> neg_images;
  std::vector<const FeatureSequence*> neg_audios;
};

struct ContrastiveBatch {
  std::vector<ContrastiveItem> items;
};

// p(pos | anchor) over {positive} + negatives, computed stably. Plain float
// path used by tests and diagnostics; the training path goes through
// contrastive_loss below.
inline double match_probability(const std::vector<float>& anchor_emb,
                                const std::vector<float>& pos_emb,
                                const std::vector<std::vector<float>>& neg_embs, double scale_value) {
  if (neg_embs.empty()) throw std::invalid_argument("match_probability: no negatives");
  std::vector<double> logits;
  logits.reserve(neg_embs.size() + 1);
  logits.push_back(scale_value * score(anchor_emb, pos_emb));
  for (const auto& neg : neg_embs) logits.push_back(scale_value * score(anchor_emb, neg));
  double max_logit = logits[0];
  for (double l : logits) max_logit = std::max(max_logit, l);
  double denom = 0.0;
  for (double l : logits) denom += std::exp(l - max_logit);
  return std::exp(logits[0] - max_logit) / denom;
}

namespace detail {

// -log p(pos | anchor) = logsumexp(logits) - logits[pos].
template <typename T>
diff::TensorT<T> direction_loss(const diff::TensorT<T>& anchor_emb,
                                const diff::TensorT<T>& pos_emb,
                                const std::vector<diff::TensorT<T>>& neg_embs,
                                const diff::TensorT<T>& scale_eff) {
  if (neg_embs.empty()) throw std::invalid_argument("contrastive loss: item has no negatives");
  std::vector<diff::TensorT<T>> logits;
  logits.reserve(neg_embs.size() + 1);
  auto pos_logit = diff::mul(diff::dot(anchor_emb, pos_emb), scale_eff);
  logits.push_back(pos_logit);
  for (const auto& neg : neg_embs) logits.push_back(diff::mul(diff::dot(anchor_emb, neg), scale_eff));
  return diff::sub(diff::logsumexp(diff::stack_scalars(logits)), pos_logit);
}

}  // namespace detail

// loss = -(1/B) * sum_b 0.5 * [log p(i+|a+) + log p(a+|i+)].
// The reverse direction scores the positive image against negative audio.
template <typename T>
diff::TensorT<T> contrastive_loss(const ContrastiveBatch& batch, const TowerParamsT<T>& audio_params,
                                  const TowerParamsT<T>& image_params, const LogitScaleT<T>& scale) {
  if (batch.items.empty()) throw std::invalid_argument("contrastive loss: empty batch");
  auto scale_eff = scale.effective();
  std::vector<diff::TensorT<T>> item_losses;
  item_losses.reserve(batch.items.size());
  for (const auto& item : batch.items) {
    if (!item.audio_pos || !item.image_pos)
      throw std::invalid_argument("contrastive loss: item missing positive pair");
    auto anchor_audio = embed(audio_params, *item.audio_pos);
    auto anchor_image = embed(image_params, *item.image_pos);
    std::vector<diff::TensorT<T>> neg_image_embs, neg_audio_embs;
    neg_image_embs.reserve(item.neg_images.size());
    for (const auto* seq : item.neg_images) neg_image_embs.push_back(embed(image_params, *seq));
    neg_audio_embs.reserve(item.neg_audios.size());
    for (const auto* seq : item.neg_audios) neg_audio_embs.push_back(embed(audio_params, *seq));

    auto loss_a2i = detail::direction_loss(anchor_audio, anchor_image, neg_image_embs, scale_eff);
    auto loss_i2a = detail::direction_loss(anchor_image, anchor_audio, neg_audio_embs, scale_eff);
    item_losses.push_back(diff::scale(diff::add(loss_a2i, loss_i2a), T(0.5)));
  }
  auto total = diff::sum(diff::stack_scalars(item_losses));
  return diff::scale(total, T(1) / T(batch.items.size()));
}

}  // namespace vgs
