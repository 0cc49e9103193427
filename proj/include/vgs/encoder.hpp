#pragma once

// Dual-tower model: per-modality pooling transformer producing a unit-norm
// embedding, plus the dot-product matching score.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vgs/feature.hpp"
#include "vgs/tensor.hpp"

namespace vgs {

struct TowerConfig {
  std::size_t input_dim = 768;  // audio default; image uses 2048
  std::size_t width = 256;
  std::size_t embed_dim = 256;
  std::size_t heads = 4;  // width / 64
  std::size_t mlp_dim = 1024;
  // When true, the block runs self-attention over [CLS; frames] instead of
  // the CLS-only cross-attention. Kept as an A/B switch; both readings are
  // consistent with a learnable CLS used as the query.
  bool cls_self_attention = false;

  // Fills the width-derived defaults: E = W, heads = W/64 (min 1), mlp = 4W.
  static TowerConfig for_width(std::size_t input_dim, std::size_t width) {
    TowerConfig cfg;
    cfg.input_dim = input_dim;
    cfg.width = width;
    cfg.embed_dim = width;
    cfg.heads = std::max<std::size_t>(1, width / 64);
    cfg.mlp_dim = 4 * width;
    return cfg;
  }

  void validate() const {
    if (input_dim == 0 || width == 0 || embed_dim == 0 || heads == 0 || mlp_dim == 0)
      throw std::invalid_argument("tower config: all dimensions must be >= 1");
    if (width % heads != 0)
      throw std::invalid_argument("tower config: width " + std::to_string(width) +
                                  " not divisible by " + std::to_string(heads) + " heads");
  }

  bool operator==(const TowerConfig&) const = default;
};

enum class ParamInit { xavier_uniform, zeros, ones, cls_gaussian };

struct ParamFieldSpec {
  std::string name;
  std::size_t rows, cols;  // cols == 1 for vectors
  ParamInit init;
};

// Single source of truth for the tower's parameter fields: initialization,
// counting, serialization, and the optimizer all iterate this list.
inline std::vector<ParamFieldSpec> tower_field_specs(const TowerConfig& cfg) {
  const std::size_t d = cfg.input_dim, w = cfg.width, e = cfg.embed_dim, m = cfg.mlp_dim;
  return {
      {"input_proj.weight", d, w, ParamInit::xavier_uniform},
      {"input_proj.bias", w, 1, ParamInit::zeros},
      {"cls_query", 1, w, ParamInit::cls_gaussian},
      {"attn.q.weight", w, w, ParamInit::xavier_uniform},
      {"attn.q.bias", w, 1, ParamInit::zeros},
      {"attn.k.weight", w, w, ParamInit::xavier_uniform},
      {"attn.k.bias", w, 1, ParamInit::zeros},
      {"attn.v.weight", w, w, ParamInit::xavier_uniform},
      {"attn.v.bias", w, 1, ParamInit::zeros},
      {"attn.o.weight", w, w, ParamInit::xavier_uniform},
      {"attn.o.bias", w, 1, ParamInit::zeros},
      {"ln1.gamma", w, 1, ParamInit::ones},
      {"ln1.beta", w, 1, ParamInit::zeros},
      {"ln2.gamma", w, 1, ParamInit::ones},
      {"ln2.beta", w, 1, ParamInit::zeros},
      {"mlp.fc1.weight", w, m, ParamInit::xavier_uniform},
      {"mlp.fc1.bias", m, 1, ParamInit::zeros},
      {"mlp.fc2.weight", m, w, ParamInit::xavier_uniform},
      {"mlp.fc2.bias", w, 1, ParamInit::zeros},
      {"output_proj.weight", w, e, ParamInit::xavier_uniform},
      {"output_proj.bias", e, 1, ParamInit::zeros},
  };
}

// Exact count of trainable scalars in one tower.
inline std::size_t tower_param_count(const TowerConfig& cfg) {
  std::size_t total = 0;
  for (const auto& f : tower_field_specs(cfg)) total += f.rows * f.cols;
  return total;
}

// Exact count across both towers (logit scale excluded).
inline std::size_t param_count(const TowerConfig& audio_cfg, const TowerConfig& image_cfg) {
  audio_cfg.validate();
  image_cfg.validate();
  return tower_param_count(audio_cfg) + tower_param_count(image_cfg);
}

template <typename T>
struct TowerParamsT {
  TowerConfig config;
  diff::TensorT<T> input_w, input_b, cls;
  diff::TensorT<T> q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  diff::TensorT<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  diff::TensorT<T> mlp1_w, mlp1_b, mlp2_w, mlp2_b;
  diff::TensorT<T> out_w, out_b;

  // Same order as tower_field_specs.
  std::vector<std::pair<std::string, diff::TensorT<T>*>> named() {
    return {{"input_proj.weight", &input_w}, {"input_proj.bias", &input_b},
            {"cls_query", &cls},
            {"attn.q.weight", &q_w},         {"attn.q.bias", &q_b},
            {"attn.k.weight", &k_w},         {"attn.k.bias", &k_b},
            {"attn.v.weight", &v_w},         {"attn.v.bias", &v_b},
            {"attn.o.weight", &o_w},         {"attn.o.bias", &o_b},
            {"ln1.gamma", &ln1_gamma},       {"ln1.beta", &ln1_beta},
            {"ln2.gamma", &ln2_gamma},       {"ln2.beta", &ln2_beta},
            {"mlp.fc1.weight", &mlp1_w},     {"mlp.fc1.bias", &mlp1_b},
            {"mlp.fc2.weight", &mlp2_w},     {"mlp.fc2.bias", &mlp2_b},
            {"output_proj.weight", &out_w},  {"output_proj.bias", &out_b}};
  }
  std::vector<std::pair<std::string, const diff::TensorT<T>*>> named() const {
    auto mutable_named = const_cast<TowerParamsT*>(this)->named();
    std::vector<std::pair<std::string, const diff::TensorT<T>*>> out;
    out.reserve(mutable_named.size());
    for (auto& [name, t] : mutable_named) out.emplace_back(name, t);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t->numel();
    return n;
  }

  // Value-only copy with requires_grad off; used for validation passes and
  // read-only evaluation so no graph is recorded.
  TowerParamsT detached_clone() const {
    TowerParamsT out;
    out.config = config;
    auto src = named();
    auto dst = out.named();
    for (std::size_t i = 0; i < src.size(); ++i)
      *dst[i].second = diff::TensorT<T>::from(src[i].second->shape(), src[i].second->values(), false);
    return out;
  }
};

using TowerParams = TowerParamsT<float>;

// Xavier-uniform weights, zero biases, unit LN gamma, CLS ~ N(0, 0.02^2).
// Deterministic for a given engine state; fields are drawn in spec order.
template <typename T>
TowerParamsT<T> init_tower(const TowerConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  TowerParamsT<T> params;
  params.config = cfg;
  auto specs = tower_field_specs(cfg);
  auto fields = params.named();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    const std::size_t n = spec.rows * spec.cols;
    std::vector<T> values(n, T(0));
    switch (spec.init) {
      case ParamInit::zeros:
        break;
      case ParamInit::ones:
        std::fill(values.begin(), values.end(), T(1));
        break;
      case ParamInit::xavier_uniform: {
        const double limit = std::sqrt(6.0 / double(spec.rows + spec.cols));
        std::uniform_real_distribution<double> dist(-limit, limit);
        for (auto& v : values) v = T(dist(rng));
        break;
      }
      case ParamInit::cls_gaussian: {
        std::normal_distribution<double> dist(0.0, 0.02);
        for (auto& v : values) v = T(dist(rng));
        break;
      }
    }
    diff::Shape shape = spec.cols == 1 ? diff::Shape{spec.rows} : diff::Shape{spec.rows, spec.cols};
    *fields[i].second = diff::TensorT<T>::from(std::move(shape), std::move(values), true);
  }
  return params;
}

// Pooling-transformer forward pass over an already-built frame tensor
// (rows = frames, cols = input_dim). Pre-norm residual block with the CLS
// query, then output projection and L2 normalization. Returns a [1 x E]
// unit-norm row.
template <typename T>
diff::TensorT<T> embed_frames(const TowerParamsT<T>& p, const diff::TensorT<T>& frames) {
  using namespace diff;
  if (frames.rows() < 1 || frames.numel() == 0)
    throw std::invalid_argument("embed: need at least one frame");
  if (frames.cols() != p.config.input_dim)
    throw std::invalid_argument("embed: frame dim " + std::to_string(frames.cols()) +
                                " does not match tower input dim " +
                                std::to_string(p.config.input_dim));

  auto projected = add_bias(matmul(frames, p.input_w), p.input_b);  // T x W

  TensorT<T> attended;
  if (!p.config.cls_self_attention) {
    auto q_in = layer_norm(p.cls, p.ln1_gamma, p.ln1_beta);
    auto kv_in = layer_norm(projected, p.ln1_gamma, p.ln1_beta);
    auto q = add_bias(matmul(q_in, p.q_w), p.q_b);
    auto k = add_bias(matmul(kv_in, p.k_w), p.k_b);
    auto v = add_bias(matmul(kv_in, p.v_w), p.v_b);
    attended = add_bias(matmul(multi_head_attention(q, k, v, p.config.heads), p.o_w), p.o_b);
  } else {
    auto seq = concat_rows<T>({p.cls, projected});  // (1+T) x W
    auto normed = layer_norm(seq, p.ln1_gamma, p.ln1_beta);
    auto q = add_bias(matmul(normed, p.q_w), p.q_b);
    auto k = add_bias(matmul(normed, p.k_w), p.k_b);
    auto v = add_bias(matmul(normed, p.v_w), p.v_b);
    auto all = add_bias(matmul(multi_head_attention(q, k, v, p.config.heads), p.o_w), p.o_b);
    attended = slice_rows(all, 0, 1);
  }
  auto after_attn = add(p.cls, attended);

  auto mlp_in = layer_norm(after_attn, p.ln2_gamma, p.ln2_beta);
  auto hidden = gelu(add_bias(matmul(mlp_in, p.mlp1_w), p.mlp1_b));
  auto mlp_out = add_bias(matmul(hidden, p.mlp2_w), p.mlp2_b);
  auto pooled = add(after_attn, mlp_out);

  auto embedding = add_bias(matmul(pooled, p.out_w), p.out_b);  // 1 x E
  return l2_normalize(embedding);
}

template <typename T>
diff::TensorT<T> to_tensor(const FeatureSequence& seq) {
  std::vector<T> values(seq.data.begin(), seq.data.end());
  return diff::TensorT<T>::from({seq.frames, seq.dim}, std::move(values));
}

template <typename T>
diff::TensorT<T> embed(const TowerParamsT<T>& params, const FeatureSequence& seq) {
  if (seq.frames == 0) throw std::invalid_argument("embed: empty feature sequence");
  return embed_frames(params, to_tensor<T>(seq));
}

struct EmbeddingVector {
  std::vector<float> values;
  Modality modality = Modality::audio;
};

// Plain (non-graph) similarity score between two unit-norm embeddings.
inline float score(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("score: embedding dims " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  float s = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline float score(const EmbeddingVector& a, const EmbeddingVector& b) {
  return score(a.values, b.values);
}

template <typename T>
EmbeddingVector embed_vector(const TowerParamsT<T>& params, const FeatureSequence& seq,
                             Modality modality) {
  auto t = embed(params, seq);
  EmbeddingVector out;
  out.values.assign(t.values().begin(), t.values().end());
  out.modality = modality;
  return out;
}

}  // namespace vgs
