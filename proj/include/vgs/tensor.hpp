#pragma once

// Reverse-mode differentiable tensor core. Provides exactly the ops the
// pooling towers and the contrastive loss need; nothing more.
//
// Tensors are handles to shared nodes. Each op records a backward closure
// that accumulates into its parents' grad buffers. Training runs in float;
// the same code instantiates with double for tight gradient checks.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace vgs::diff {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

// Count of guarded zero-vector normalizations since process start.
// l2_normalize bumps this instead of erroring; transient zero vectors can
// occur at init.
inline std::atomic<long>& degenerate_normalize_count() {
  static std::atomic<long> count{0};
  return count;
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // sized iff requires_grad, once touched by backward
  bool requires_grad = false;
  bool backward_done = false;  // set on the root after backward()
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

  std::size_t numel() const { return values.size(); }
  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
};

template <typename T>
class TensorT {
 public:
  using Scalar = T;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static TensorT filled(Shape shape, T value, bool requires_grad = false) {
    for (auto d : shape)
      if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape " + shape_str(shape));
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->values.assign(shape_numel(node->shape), value);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return TensorT(std::move(node));
  }

  static TensorT from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw std::invalid_argument("tensor: " + std::to_string(values.size()) +
                                  " values do not fill shape " + shape_str(shape));
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return TensorT(std::move(node));
  }

  static TensorT scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->numel(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  // 2-D helpers; rows() is the product of all axes but the last.
  std::size_t rows() const {
    return node_->shape.size() <= 1 ? 1 : node_->numel() / node_->shape.back();
  }
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }

  const std::vector<T>& values() const { return node_->values; }
  std::vector<T>& values() { return node_->values; }
  const std::vector<T>& grad() const { return node_->grad; }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->values[0];
  }
  T at(std::size_t r, std::size_t c) const { return node_->values[r * cols() + c]; }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->values.size(), T(0));
    node_->backward_done = false;
  }

  std::shared_ptr<Node<T>> node() const { return node_; }

  explicit TensorT(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

namespace detail {

template <typename T>
TensorT<T> make_result(Shape shape, std::vector<T> values,
                       std::vector<std::shared_ptr<Node<T>>> parents,
                       std::function<void(Node<T>&)> backprop) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  bool any_grad = false;
  for (const auto& p : parents) any_grad = any_grad || p->requires_grad;
  node->requires_grad = any_grad;
  if (any_grad) {
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return TensorT<T>(std::move(node));
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra ops
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& n) {
    for (int p = 0; p < 2; ++p) {
      auto& par = *n.parents[p];
      if (!par.requires_grad) continue;
      par.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) par.grad[i] += n.grad[i];
    }
  });
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] -= n.grad[i];
    }
  });
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [](Node<T>& n) {
    auto& pa = *n.parents[0];
    auto& pb = *n.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * pb.values[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < n.grad.size(); ++i) pb.grad[i] += n.grad[i] * pa.values[i];
    }
  });
}

// Multiply by a compile-time-known constant (not a learnable input).
template <typename T>
TensorT<T> scale(const TensorT<T>& a, T c) {
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  return detail::make_result<T>(a.shape(), std::move(out), {a.node()}, [c](Node<T>& n) {
    auto& pa = *n.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t i = 0; i < n.grad.size(); ++i) pa.grad[i] += n.grad[i] * c;
  });
}

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<T> out(m * n, T(0));
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const T ail = av[i * k + l];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += ail * bv[l * n + j];
    }
  return detail::make_result<T>({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node<T>& nd) {
    auto& pa = *nd.parents[0];
    auto& pb = *nd.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();  // dA = dC * B^T
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const T g = nd.grad[i * n + j];
          for (std::size_t l = 0; l < k; ++l) pa.grad[i * k + l] += g * pb.values[l * n + j];
        }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();  // dB = A^T * dC
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          const T a_il = pa.values[i * k + l];
          for (std::size_t j = 0; j < n; ++j) pb.grad[l * n + j] += a_il * nd.grad[i * n + j];
        }
    }
  });
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& a) {
  if (a.shape().size() != 2)
    throw std::invalid_argument("transpose: need 2-D tensor, got " + shape_str(a.shape()));
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<T> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  return detail::make_result<T>({n, m}, std::move(out), {a.node()}, [m, n](Node<T>& nd) {
    auto& pa = *nd.parents[0];
    if (!pa.requires_grad) return;
    pa.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += nd.grad[j * m + i];
  });
}

// X[r x d] + broadcast bias[d] over rows.
template <typename T>
TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& bias) {
  const std::size_t r = x.rows(), d = x.cols();
  if (bias.numel() != d)
    throw std::invalid_argument("add_bias: bias " + shape_str(bias.shape()) + " does not match row width " +
                                std::to_string(d));
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x.values()[i * d + j] + bias.values()[j];
  return detail::make_result<T>(x.shape(), std::move(out), {x.node(), bias.node()}, [r, d](Node<T>& nd) {
    auto& px = *nd.parents[0];
    auto& pb = *nd.parents[1];
    if (px.requires_grad) {
      px.ensure_grad();
      for (std::size_t i = 0; i < nd.grad.size(); ++i) px.grad[i] += nd.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) pb.grad[j] += nd.grad[i * d + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalizations (all over the last axis)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& x) {
  const std::size_t r = x.rows(), d = x.cols();
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.values().data() + i * d;
    T m = row[0];
    for (std::size_t j = 1; j < d; ++j) m = std::max(m, row[j]);
    T sum = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = std::exp(row[j] - m);
      sum += out[i * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] /= sum;
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()}, [r, d](Node<T>& nd) {
    auto& px = *nd.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      const T* y = nd.values.data() + i * d;
      const T* g = nd.grad.data() + i * d;
      T gy = T(0);
      for (std::size_t j = 0; j < d; ++j) gy += g[j] * y[j];
      for (std::size_t j = 0; j < d; ++j) px.grad[i * d + j] += y[j] * (g[j] - gy);
    }
  });
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      T eps = T(1e-5)) {
  const std::size_t r = x.rows(), d = x.cols();
  if (gamma.numel() != d || beta.numel() != d)
    throw std::invalid_argument("layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
  if (!(eps > T(0))) throw std::invalid_argument("layer_norm: eps must be positive");
  std::vector<T> out(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.values().data() + i * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mean) * inv;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = gamma.values()[j] * h + beta.values()[j];
    }
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
                                [r, d, xhat, inv_std](Node<T>& nd) {
    auto& px = *nd.parents[0];
    auto& pg = *nd.parents[1];
    auto& pb = *nd.parents[2];
    if (pg.requires_grad) {
      pg.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) pg.grad[j] += nd.grad[i * d + j] * (*xhat)[i * d + j];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) pb.grad[j] += nd.grad[i * d + j];
    }
    if (px.requires_grad) {
      px.ensure_grad();
      std::vector<T> dxhat(d);
      for (std::size_t i = 0; i < r; ++i) {
        T mean_dx = T(0), mean_dxh = T(0);
        for (std::size_t j = 0; j < d; ++j) {
          dxhat[j] = nd.grad[i * d + j] * pg.values[j];
          mean_dx += dxhat[j];
          mean_dxh += dxhat[j] * (*xhat)[i * d + j];
        }
        mean_dx /= T(d);
        mean_dxh /= T(d);
        for (std::size_t j = 0; j < d; ++j)
          px.grad[i * d + j] += (*inv_std)[i] * (dxhat[j] - mean_dx - (*xhat)[i * d + j] * mean_dxh);
      }
    }
  });
}

// Per-row L2 normalization: y = x / max(||x||, eps). A zero row is scaled by
// 1/eps (still zero) and counted as degenerate rather than erroring.
template <typename T>
TensorT<T> l2_normalize(const TensorT<T>& x, T eps = T(1e-12)) {
  if (!(eps > T(0))) throw std::invalid_argument("l2_normalize: eps must be positive");
  const std::size_t r = x.rows(), d = x.cols();
  std::vector<T> out(x.numel());
  auto norms = std::make_shared<std::vector<T>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const T* row = x.values().data() + i * d;
    T sq = T(0);
    for (std::size_t j = 0; j < d; ++j) sq += row[j] * row[j];
    T norm = std::sqrt(sq);
    if (norm < eps) {
      degenerate_normalize_count()++;
      norm = eps;
      (*norms)[i] = -norm;  // negative marks the degenerate (pure 1/eps) branch
    } else {
      (*norms)[i] = norm;
    }
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = row[j] / norm;
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()}, [r, d, norms](Node<T>& nd) {
    auto& px = *nd.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      const T stored = (*norms)[i];
      const T* y = nd.values.data() + i * d;
      const T* g = nd.grad.data() + i * d;
      if (stored < T(0)) {
        for (std::size_t j = 0; j < d; ++j) px.grad[i * d + j] += g[j] / (-stored);
        continue;
      }
      T yg = T(0);
      for (std::size_t j = 0; j < d; ++j) yg += y[j] * g[j];
      for (std::size_t j = 0; j < d; ++j) px.grad[i * d + j] += (g[j] - y[j] * yg) / stored;
    }
  });
}

// Exact GELU: x * Phi(x) with the normal CDF.
template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
  constexpr T inv_sqrt2 = T(0.7071067811865475244);
  constexpr T inv_sqrt2pi = T(0.3989422804014326779);
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.values()[i];
    out[i] = v * T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
  }
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()}, [](Node<T>& nd) {
    auto& px = *nd.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < nd.grad.size(); ++i) {
      const T v = px.values[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      px.grad[i] += nd.grad[i] * (cdf + v * pdf);
    }
  });
}

// Clamp to [lo, hi]; gradient passes through inside the closed interval and
// is zero where the input was strictly outside.
template <typename T>
TensorT<T> clamp(const TensorT<T>& x, T lo, T hi) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(x.values()[i], lo), hi);
  return detail::make_result<T>(x.shape(), std::move(out), {x.node()}, [lo, hi](Node<T>& nd) {
    auto& px = *nd.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < nd.grad.size(); ++i) {
      const T v = px.values[i];
      if (v >= lo && v <= hi) px.grad[i] += nd.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> slice_cols(const TensorT<T>& x, std::size_t start, std::size_t width) {
  const std::size_t r = x.rows(), d = x.cols();
  if (start + width > d)
    throw std::invalid_argument("slice_cols: [" + std::to_string(start) + ", " +
                                std::to_string(start + width) + ") exceeds width " + std::to_string(d));
  std::vector<T> out(r * width);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < width; ++j) out[i * width + j] = x.values()[i * d + start + j];
  return detail::make_result<T>({r, width}, std::move(out), {x.node()}, [r, d, start, width](Node<T>& nd) {
    auto& px = *nd.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < width; ++j) px.grad[i * d + start + j] += nd.grad[i * width + j];
  });
}

template <typename T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) throw std::invalid_argument("concat_cols: row count mismatch");
    total += p.cols();
  }
  std::vector<T> out(r * total);
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = p.values()[i * w + j];
    parents.push_back(p.node());
    widths.push_back(w);
    off += w;
  }
  return detail::make_result<T>({r, total}, std::move(out), std::move(parents),
                                [r, total, widths](Node<T>& nd) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < nd.parents.size(); ++p) {
      auto& par = *nd.parents[p];
      const std::size_t w = widths[p];
      if (par.requires_grad) {
        par.ensure_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) par.grad[i * w + j] += nd.grad[i * total + off + j];
      }
      off += w;
    }
  });
}

template <typename T>
TensorT<T> slice_rows(const TensorT<T>& x, std::size_t start, std::size_t count) {
  if (x.shape().size() != 2) throw std::invalid_argument("slice_rows: need 2-D tensor");
  const std::size_t r = x.shape()[0], d = x.shape()[1];
  if (start + count > r)
    throw std::invalid_argument("slice_rows: range exceeds " + std::to_string(r) + " rows");
  std::vector<T> out(count * d);
  std::copy_n(x.values().begin() + start * d, count * d, out.begin());
  return detail::make_result<T>({count, d}, std::move(out), {x.node()}, [start, d, count](Node<T>& nd) {
    auto& px = *nd.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < count * d; ++i) px.grad[start * d + i] += nd.grad[i];
  });
}

template <typename T>
TensorT<T> concat_rows(const std::vector<TensorT<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const std::size_t d = parts[0].cols();
  std::size_t total_rows = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 2 || p.cols() != d)
      throw std::invalid_argument("concat_rows: column count mismatch");
    total_rows += p.shape()[0];
  }
  std::vector<T> out;
  out.reserve(total_rows * d);
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<std::size_t> row_counts;
  for (const auto& p : parts) {
    out.insert(out.end(), p.values().begin(), p.values().end());
    parents.push_back(p.node());
    row_counts.push_back(p.shape()[0]);
  }
  return detail::make_result<T>({total_rows, d}, std::move(out), std::move(parents),
                                [d, row_counts](Node<T>& nd) {
    std::size_t row = 0;
    for (std::size_t p = 0; p < nd.parents.size(); ++p) {
      auto& par = *nd.parents[p];
      const std::size_t n = row_counts[p] * d;
      if (par.requires_grad) {
        par.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) par.grad[i] += nd.grad[row * d + i];
      }
      row += row_counts[p];
    }
  });
}

// Collect scalar tensors into one vector. Used to assemble the logits of a
// contrastive softmax from individually computed scores.
template <typename T>
TensorT<T> stack_scalars(const std::vector<TensorT<T>>& scalars) {
  if (scalars.empty()) throw std::invalid_argument("stack_scalars: empty input");
  std::vector<T> out(scalars.size());
  std::vector<std::shared_ptr<Node<T>>> parents;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].numel() != 1) throw std::invalid_argument("stack_scalars: inputs must be scalars");
    out[i] = scalars[i].item();
    parents.push_back(scalars[i].node());
  }
  return detail::make_result<T>({scalars.size()}, std::move(out), std::move(parents), [](Node<T>& nd) {
    for (std::size_t i = 0; i < nd.parents.size(); ++i) {
      auto& par = *nd.parents[i];
      if (!par.requires_grad) continue;
      par.ensure_grad();
      par.grad[0] += nd.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum(const TensorT<T>& x) {
  T total = std::accumulate(x.values().begin(), x.values().end(), T(0));
  return detail::make_result<T>({1}, {total}, {x.node()}, [](Node<T>& nd) {
    auto& px = *nd.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < px.grad.size(); ++i) px.grad[i] += nd.grad[0];
  });
}

template <typename T>
TensorT<T> dot(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.numel() != b.numel())
    throw std::invalid_argument("dot: size mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  T total = T(0);
  for (std::size_t i = 0; i < a.numel(); ++i) total += a.values()[i] * b.values()[i];
  return detail::make_result<T>({1}, {total}, {a.node(), b.node()}, [](Node<T>& nd) {
    auto& pa = *nd.parents[0];
    auto& pb = *nd.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < pa.grad.size(); ++i) pa.grad[i] += nd.grad[0] * pb.values[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < pb.grad.size(); ++i) pb.grad[i] += nd.grad[0] * pa.values[i];
    }
  });
}

// log(sum(exp(x))) over the whole tensor, max-subtracted for stability.
template <typename T>
TensorT<T> logsumexp(const TensorT<T>& x) {
  const auto& v = x.values();
  T m = *std::max_element(v.begin(), v.end());
  T s = T(0);
  for (auto e : v) s += std::exp(e - m);
  return detail::make_result<T>({1}, {m + std::log(s)}, {x.node()}, [m, s](Node<T>& nd) {
    auto& px = *nd.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < px.grad.size(); ++i)
      px.grad[i] += nd.grad[0] * std::exp(px.values[i] - m) / s;
  });
}

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

// Scaled dot-product attention per head over already-projected Q/K/V,
// concatenated across heads. Head h uses columns [h*W/heads, (h+1)*W/heads).
// The caller owns all four linear projections.
template <typename T>
TensorT<T> multi_head_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                                std::size_t heads) {
  const std::size_t width = q.cols();
  if (heads == 0 || width % heads != 0)
    throw std::invalid_argument("multi_head_attention: width " + std::to_string(width) +
                                " not divisible by " + std::to_string(heads) + " heads");
  if (k.cols() != width || v.cols() != width || k.rows() != v.rows())
    throw std::invalid_argument("multi_head_attention: K/V shape mismatch");
  const std::size_t head_dim = width / heads;
  const T inv_sqrt_dim = T(1) / std::sqrt(T(head_dim));
  std::vector<TensorT<T>> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = slice_cols(q, h * head_dim, head_dim);
    auto kh = slice_cols(k, h * head_dim, head_dim);
    auto vh = slice_cols(v, h * head_dim, head_dim);
    auto weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dim));
    outputs.push_back(matmul(weights, vh));
  }
  return heads == 1 ? outputs[0] : concat_cols(outputs);
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

template <typename T>
void backward(const TensorT<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a defined scalar tensor");
  auto root = loss.node();
  if (root->backward_done)
    throw std::runtime_error("backward: already ran for this loss; rebuild the graph or zero_grad");
  if (!root->requires_grad) {
    root->backward_done = true;
    return;  // nothing trainable participated
  }

  // Iterative post-order topo sort over parent edges.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
    }
  }
  root->backward_done = true;
}

}  // namespace vgs::diff
