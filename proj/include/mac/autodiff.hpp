#pragma once

// Reverse-mode automatic differentiation over dense row-major float64 arrays.
//
// Graphs are define-by-run: every op that touches a tensor requiring a
// gradient appends a node holding its parents and a backward closure. Node
// creation order is recorded with a monotonically increasing sequence number,
// so parents always precede children and backward() can visit the reachable
// set once in reverse insertion order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mac/errors.hpp"
#include "mac/random.hpp"

namespace mac {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Receives the gradient of the op's output and accumulates into parents.
using BackwardFn = std::function<void(std::span<const double>)>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
};

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed) + 1;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Shared handle to a node of the differentiation graph. Copies alias the
/// same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_size(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_string(shape));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_sequence();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(data), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t size() const { return node().data.size(); }

  std::size_t rows() const {
    require_matrix();
    return node().shape[0];
  }
  std::size_t cols() const {
    require_matrix();
    return node().shape[1];
  }

  std::span<const double> data() const { return node().data; }
  std::span<double> mutable_data() { return node().data; }

  double item() const {
    if (size() != 1) {
      throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    }
    return node().data[0];
  }

  double at(std::size_t r, std::size_t c) const { return node().data[r * cols() + c]; }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool on) { node().requires_grad = on; }
  bool is_leaf() const { return !node().backward; }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const double> grad() const { return node().grad; }

  /// Gradient buffer, allocated as zeros on first access.
  std::span<double> grad_sink() const {
    auto& g = node_->grad;
    if (g.size() != node_->data.size()) g.assign(node_->data.size(), 0.0);
    return g;
  }

  void zero_grad() {
    auto& g = node().grad;
    std::fill(g.begin(), g.end(), 0.0);
  }

  /// Same data, detached from the graph.
  Tensor detach() const { return Tensor(shape(), node().data, false); }

  /// Independent leaf with copied data and the same requires_grad flag.
  Tensor clone() const { return Tensor(shape(), node().data, requires_grad()); }

  std::uint64_t sequence() const { return node().seq; }

  /// Accumulates d(this)/d(leaf) into every reachable leaf requiring a gradient.
  void backward() const;

  friend Tensor make_op(Shape shape, std::vector<double> data,
                        const std::vector<Tensor>& parents, BackwardFn backward);

 private:
  detail::Node& node() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return *node_;
  }

  void require_matrix() const {
    if (node().shape.size() != 2) {
      throw DimensionError("expected a matrix, got shape " + shape_string(node().shape));
    }
  }

  std::shared_ptr<detail::Node> node_;
};

/// Builds an op result. The backward closure is kept only when some parent
/// needs a gradient and recording is enabled.
inline Tensor make_op(Shape shape, std::vector<double> data,
                      const std::vector<Tensor>& parents, BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data), false);
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const auto& p : parents) {
    for (double v : p.data()) inputs_finite = inputs_finite && std::isfinite(v);
  }
  if (inputs_finite) {
    for (double v : out.data()) {
      if (!std::isfinite(v)) throw ContractError("non-finite value produced from finite inputs");
    }
  }
#endif
  if (!grad_enabled()) return out;
  const bool any = std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return p.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (const auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward);
  return out;
}

inline void Tensor::backward() const {
  if (size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_string(shape()));
  }
  if (!requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });

  for (detail::Node* n : order) {
    if (n->backward) n->grad.assign(n->data.size(), 0.0);
  }
  if (node_->grad.size() != 1) node_->grad.assign(1, 0.0);
  node_->grad[0] += 1.0;

  for (detail::Node* n : order) {
    if (n->backward) n->backward(n->grad);
  }
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

template <class Fn, class Dfn>
Tensor unary(const Tensor& x, Fn f, Dfn df) {
  std::vector<double> out(x.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  return make_op(x.shape(), std::move(out), {x}, [x, df](std::span<const double> g) {
    auto gx = x.grad_sink();
    auto xs = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xs[i]);
  });
}

}  // namespace detail

/// Matrix product of [m×k] and [k×n].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.cols() != b.rows()) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  auto ad = a.data();
  auto bd = b.data();
  // Extended accumulator: one rounding per output entry instead of one per term.
  std::vector<long double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0L);
    for (std::size_t p = 0; p < k; ++p) {
      const long double av = ad[i * k + p];
      if (av == 0.0L) continue;
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<double>(row[j]);
  }
  return make_op({m, n}, std::move(out), {a, b}, [a, b, m, k, n](std::span<const double> g) {
    auto ad = a.data();
    auto bd = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_sink();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bd[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (b.requires_grad()) {
      auto gb = b.grad_sink();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ad[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
      }
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto gt = t->grad_sink();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = a.grad_sink();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_sink();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_op(a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = a.grad_sink();
      auto bd = b.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bd[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_sink();
      auto ad = a.data();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ad[i];
    }
  });
}

/// Adds a length-n bias to every row of an [m×n] matrix.
inline Tensor add_row(const Tensor& x, const Tensor& bias) {
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.size() != n) {
    throw DimensionError("add_row: bias " + shape_string(bias.shape()) +
                         " does not match matrix " + shape_string(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bd[j];
  }
  return make_op(x.shape(), std::move(out), {x, bias}, [x, bias, m, n](std::span<const double> g) {
    if (x.requires_grad()) {
      auto gx = x.grad_sink();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (bias.requires_grad()) {
      auto gb = bias.grad_sink();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
    }
  });
}

/// Scales row i of an [m×n] matrix by factors[i].
inline Tensor mul_rows(const Tensor& x, const Tensor& factors) {
  const std::size_t m = x.rows(), n = x.cols();
  if (factors.size() != m) {
    throw DimensionError("mul_rows: factors " + shape_string(factors.shape()) +
                         " do not match matrix " + shape_string(x.shape()));
  }
  std::vector<double> out(m * n);
  auto xd = x.data();
  auto fd = factors.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] * fd[i];
  }
  return make_op(x.shape(), std::move(out), {x, factors},
                 [x, factors, m, n](std::span<const double> g) {
                   auto xd = x.data();
                   auto fd = factors.data();
                   if (x.requires_grad()) {
                     auto gx = x.grad_sink();
                     for (std::size_t i = 0; i < m; ++i) {
                       for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[i * n + j] * fd[i];
                     }
                   }
                   if (factors.requires_grad()) {
                     auto gf = factors.grad_sink();
                     for (std::size_t i = 0; i < m; ++i) {
                       double acc = 0.0;
                       for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * xd[i * n + j];
                       gf[i] += acc;
                     }
                   }
                 });
}

inline Tensor scale(const Tensor& x, double factor) {
  return detail::unary(
      x, [factor](double v) { return v * factor; }, [factor](double) { return factor; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return detail::sigmoid(v); },
      [](double v) {
        const double s = detail::sigmoid(v);
        return s * (1.0 - s);
      });
}

/// x * sigmoid(x).
inline Tensor silu(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return v * detail::sigmoid(v); },
      [](double v) {
        const double s = detail::sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

/// log(1 + exp(x)).
inline Tensor softplus(const Tensor& x) {
  return detail::unary(
      x, [](double v) { return detail::softplus(v); }, [](double v) { return detail::sigmoid(v); });
}

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_op({1}, {total}, {x}, [x](std::span<const double> g) {
    auto gx = x.grad_sink();
    for (auto& v : gx) v += g[0];
  });
}

inline Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_op({1}, {total / n}, {x}, [x, n](std::span<const double> g) {
    auto gx = x.grad_sink();
    for (auto& v : gx) v += g[0] / n;
  });
}

/// Sum of x weighted elementwise by a constant array.
inline Tensor weighted_sum(const Tensor& x, std::span<const double> weights) {
  if (weights.size() != x.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(weights.size()) +
                         " weights for tensor " + shape_string(x.shape()));
  }
  std::vector<double> w(weights.begin(), weights.end());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) total += w[i] * x.data()[i];
  return make_op({1}, {total}, {x}, [x, w = std::move(w)](std::span<const double> g) {
    auto gx = x.grad_sink();
    for (std::size_t i = 0; i < w.size(); ++i) gx[i] += g[0] * w[i];
  });
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
inline Tensor softmax_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xd.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(row[j] - mx);
      total += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= total;
  }
  std::vector<double> probs = out;
  return make_op(x.shape(), std::move(out), {x},
                 [x, probs = std::move(probs), m, n](std::span<const double> g) {
                   auto gx = x.grad_sink();
                   for (std::size_t i = 0; i < m; ++i) {
                     double dot = 0.0;
                     for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * probs[i * n + j];
                     for (std::size_t j = 0; j < n; ++j) {
                       gx[i * n + j] += probs[i * n + j] * (g[i * n + j] - dot);
                     }
                   }
                 });
}

/// Depthwise causal convolution of x [T×D] with kernel [W×D]. Position t sees
/// x rows t-W+1..t; rows before the start are zero.
inline Tensor causal_depthwise_conv(const Tensor& x, const Tensor& kernel) {
  const std::size_t steps = x.rows(), channels = x.cols();
  const std::size_t width = kernel.rows();
  if (width < 1 || kernel.cols() != channels) {
    throw DimensionError("causal_depthwise_conv: kernel " + shape_string(kernel.shape()) +
                         " does not match input " + shape_string(x.shape()));
  }
  std::vector<double> out(steps * channels, 0.0);
  auto xd = x.data();
  auto kd = kernel.data();
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t w = 0; w < width; ++w) {
      const std::size_t shift = width - 1 - w;
      if (shift > t) continue;
      const std::size_t src = t - shift;
      for (std::size_t d = 0; d < channels; ++d) {
        out[t * channels + d] += kd[w * channels + d] * xd[src * channels + d];
      }
    }
  }
  return make_op(x.shape(), std::move(out), {x, kernel},
                 [x, kernel, steps, channels, width](std::span<const double> g) {
                   auto xd = x.data();
                   auto kd = kernel.data();
                   const bool gx_on = x.requires_grad();
                   const bool gk_on = kernel.requires_grad();
                   std::span<double> gx, gk;
                   if (gx_on) gx = x.grad_sink();
                   if (gk_on) gk = kernel.grad_sink();
                   for (std::size_t t = 0; t < steps; ++t) {
                     for (std::size_t w = 0; w < width; ++w) {
                       const std::size_t shift = width - 1 - w;
                       if (shift > t) continue;
                       const std::size_t src = t - shift;
                       for (std::size_t d = 0; d < channels; ++d) {
                         const double gv = g[t * channels + d];
                         if (gx_on) gx[src * channels + d] += gv * kd[w * channels + d];
                         if (gk_on) gk[w * channels + d] += gv * xd[src * channels + d];
                       }
                     }
                   }
                 });
}

inline Tensor transpose(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xd[i * n + j];
  }
  return make_op({n, m}, std::move(out), {x}, [x, m, n](std::span<const double> g) {
    auto gx = x.grad_sink();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    }
  });
}

/// Columns [begin, begin+count) of a matrix.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t m = x.rows(), n = x.cols();
  if (begin + count > n) {
    throw DimensionError("slice_cols: range exceeds " + shape_string(x.shape()));
  }
  std::vector<double> out(m * count);
  auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(xd.data() + i * n + begin, count, out.data() + i * count);
  }
  return make_op({m, count}, std::move(out), {x},
                 [x, begin, count, m, n](std::span<const double> g) {
                   auto gx = x.grad_sink();
                   for (std::size_t i = 0; i < m; ++i) {
                     for (std::size_t j = 0; j < count; ++j) gx[i * n + begin + j] += g[i * count + j];
                   }
                 });
}

/// Horizontal concatenation of matrices with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) throw DimensionError("concat_cols: row counts differ");
    n += p.cols();
  }
  std::vector<double> out(m * n);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t c = p.cols();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(p.data().data() + i * c, c, out.data() + i * n + offset);
    }
    offset += c;
  }
  return make_op({m, n}, std::move(out), parts, [parts, m, n](std::span<const double> g) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      const std::size_t c = p.cols();
      if (p.requires_grad()) {
        auto gp = p.grad_sink();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * n + offset + j];
        }
      }
      offset += c;
    }
  });
}

/// Vertical concatenation of matrices with equal column counts.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) throw DimensionError("concat_rows: column counts differ");
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op({m, n}, std::move(out), parts, [parts](std::span<const double> g) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) {
        auto gp = p.grad_sink();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset + i];
      }
      offset += p.size();
    }
  });
}

/// Rows of x selected by index; indices may repeat.
inline Tensor gather_rows(const Tensor& x, std::vector<std::size_t> indices) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(indices.size() * n);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= m) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[r]) +
                           " out of range for " + shape_string(x.shape()));
    }
    std::copy_n(x.data().data() + indices[r] * n, n, out.data() + r * n);
  }
  const std::size_t k = indices.size();
  return make_op({k, n}, std::move(out), {x},
                 [x, indices = std::move(indices), n](std::span<const double> g) {
                   auto gx = x.grad_sink();
                   for (std::size_t r = 0; r < indices.size(); ++r) {
                     for (std::size_t j = 0; j < n; ++j) gx[indices[r] * n + j] += g[r * n + j];
                   }
                 });
}

/// Column means of an [m×n] matrix as a [1×n] row.
inline Tensor mean_rows(const Tensor& x) {
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(n, 0.0);
  auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j] += xd[i * n + j];
  }
  for (auto& v : out) v /= static_cast<double>(m);
  return make_op({1, n}, std::move(out), {x}, [x, m, n](std::span<const double> g) {
    auto gx = x.grad_sink();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j] * inv;
    }
  });
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op(std::move(shape), std::move(out), {x}, [x](std::span<const double> g) {
    auto gx = x.grad_sink();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares analytic gradients of the scalar function `f` with respect to
/// `inputs` against central differences. When `max_coords_per_tensor` is
/// nonzero, that many coordinates per tensor are sampled with `seed`.
inline GradCheckResult finite_diff_check(const std::function<Tensor()>& f,
                                         const std::vector<Tensor>& inputs, double h = 1e-6,
                                         std::size_t max_coords_per_tensor = 0,
                                         std::uint64_t seed = 0) {
  std::vector<Tensor> params = inputs;
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    auto g = p.grad_sink();
    analytic.emplace_back(g.begin(), g.end());
  }

  GradCheckResult result;
  Rng rng(seed);
  NoGradGuard no_grad;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto values = params[t].mutable_data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords_per_tensor != 0 && coords.size() > max_coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(max_coords_per_tensor);
    }
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = f().item();
      values[i] = saved - h;
      const double down = f().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coordinates_checked;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_tensor = t;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

/// Single-input form: f maps x to a scalar tensor.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                double h = 1e-6) {
  return finite_diff_check([&] { return f(x); }, {x}, h).max_relative_error;
}

}  // namespace mac
