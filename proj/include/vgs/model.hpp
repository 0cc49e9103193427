#pragma once

// Full model bundle (both towers plus the logit scale) and its checkpoint
// format: a JSON header with configs and a (name, shape, offset) manifest,
// followed by a little-endian float32 blob.

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vgs/encoder.hpp"
#include "vgs/objective.hpp"

namespace vgs {

struct ModelConfig {
  TowerConfig audio;
  TowerConfig image;
  double scale_init = LogitScale::kDefaultInit;

  void validate() const {
    audio.validate();
    image.validate();
    if (scale_init <= 0) throw std::invalid_argument("model config: scale init must be positive");
  }
};

template <typename T>
struct ModelT {
  TowerParamsT<T> audio;
  TowerParamsT<T> image;
  LogitScaleT<T> scale;

  // All learnable tensors: both towers in spec order, then the logit scale.
  std::vector<std::pair<std::string, diff::TensorT<T>*>> named_parameters() {
    std::vector<std::pair<std::string, diff::TensorT<T>*>> out;
    for (auto& [name, t] : audio.named()) out.emplace_back("audio." + name, t);
    for (auto& [name, t] : image.named()) out.emplace_back("image." + name, t);
    out.emplace_back("logit_scale", &scale.s);
    return out;
  }

  void zero_grad() {
    for (auto& [name, t] : named_parameters()) t->zero_grad();
  }

  ModelT detached_clone() const {
    ModelT out;
    out.audio = audio.detached_clone();
    out.image = image.detached_clone();
    out.scale = scale.detached_clone();
    return out;
  }
};

using Model = ModelT<float>;

template <typename T>
ModelT<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelT<T> model;
  model.audio = init_tower<T>(cfg.audio, rng);
  model.image = init_tower<T>(cfg.image, rng);
  model.scale = LogitScaleT<T>::init(cfg.scale_init);
  return model;
}

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace vgs
