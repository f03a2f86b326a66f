#pragma once

// Multi-head self-attention within feature groups and across pooled group
// tokens, with the attention matrices returned for export.

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mac/autodiff.hpp"
#include "mac/errors.hpp"
#include "mac/groups.hpp"
#include "mac/mamba.hpp"

namespace mac {

/// One attention layer of width D with H heads of size d_k = D/H. Head h uses
/// columns [h·d_k, (h+1)·d_k) of the query/key/value maps.
struct AttentionLayerParams {
  Tensor norm_gain;  ///< [1×D], pre-norm gain
  Tensor w_q;        ///< [D×D]
  Tensor w_k;        ///< [D×D]
  Tensor w_v;        ///< [D×D]
  Tensor w_o;        ///< [D×D]
  std::size_t heads = 1;
  double rms_epsilon = 1e-6;

  std::size_t width() const { return w_q.rows(); }
  std::size_t head_dim() const { return width() / heads; }
};

/// Row-major T×T matrix per head.
using HeadWeights = std::vector<std::vector<double>>;

struct AttentionResult {
  Tensor output;
  HeadWeights weights;
};

inline void check_heads(std::size_t width, std::size_t heads) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) +
                      " is not divisible by head count " + std::to_string(heads));
  }
}

/// Concat_h(softmax(Q_h K_hᵀ / sqrt(d_k)) V_h) · W_O.
inline AttentionResult multi_head_self_attention(const Tensor& x, const AttentionLayerParams& p) {
  const std::size_t width = p.width();
  check_heads(width, p.heads);
  if (x.shape().size() != 2 || x.cols() != width || x.rows() < 1) {
    throw DimensionError("attention: input " + shape_string(x.shape()) +
                         " incompatible with width " + std::to_string(width));
  }
  const std::size_t dk = p.head_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  const Tensor q = matmul(x, p.w_q);
  const Tensor k = matmul(x, p.w_k);
  const Tensor v = matmul(x, p.w_v);
  AttentionResult result;
  std::vector<Tensor> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const Tensor qh = slice_cols(q, h * dk, dk);
    const Tensor kh = slice_cols(k, h * dk, dk);
    const Tensor vh = slice_cols(v, h * dk, dk);
    const Tensor attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    result.weights.emplace_back(attn.data().begin(), attn.data().end());
    heads.push_back(matmul(attn, vh));
  }
  const Tensor merged = heads.size() == 1 ? heads[0] : concat_cols(heads);
  result.output = matmul(merged, p.w_o);
  return result;
}

/// x + MHA(RMSNorm(x)).
inline AttentionResult attention_layer(const Tensor& x, const AttentionLayerParams& p) {
  AttentionResult inner = multi_head_self_attention(rmsnorm(x, p.norm_gain, p.rms_epsilon), p);
  inner.output = add(x, inner.output);
  return inner;
}

struct StackResult {
  Tensor output;
  std::vector<HeadWeights> layers;  ///< [layer][head] -> T×T
};

inline StackResult apply_attention_stack(const Tensor& x,
                                         std::span<const AttentionLayerParams> layers) {
  StackResult result;
  result.output = x;
  for (const auto& layer : layers) {
    AttentionResult r = attention_layer(result.output, layer);
    result.output = r.output;
    result.layers.push_back(std::move(r.weights));
  }
  return result;
}

inline std::size_t attention_layer_parameter_count(std::size_t width) {
  return width + 4 * width * width;
}

/// Query/key/value maps uniform in ±1/sqrt(D); W_O starts at zero so each
/// residual layer is the identity at initialization.
inline AttentionLayerParams init_attention_layer(std::size_t width, std::size_t heads, Rng& rng,
                                                 double rms_epsilon = 1e-6) {
  check_heads(width, heads);
  const double bound = 1.0 / std::sqrt(static_cast<double>(width));
  auto uniform = [&] {
    std::vector<double> v(width * width);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::matrix(width, width, std::move(v), true);
  };
  AttentionLayerParams p;
  p.heads = heads;
  p.rms_epsilon = rms_epsilon;
  p.norm_gain = Tensor::matrix(1, width, std::vector<double>(width, 1.0), true);
  p.w_q = uniform();
  p.w_k = uniform();
  p.w_v = uniform();
  p.w_o = Tensor::zeros({width, width}, true);
  return p;
}

template <class Fn>
void for_each_parameter(AttentionLayerParams& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + "norm_gain", p.norm_gain);
  fn(prefix + "w_q", p.w_q);
  fn(prefix + "w_k", p.w_k);
  fn(prefix + "w_v", p.w_v);
  fn(prefix + "w_o", p.w_o);
}

/// Group tag of every feature position.
struct GroupPartition {
  std::vector<Group> feature_groups;

  std::vector<std::size_t> members(Group g) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < feature_groups.size(); ++i) {
      if (feature_groups[i] == g) out.push_back(i);
    }
    return out;
  }
};

struct GroupAttentionOutput {
  Group group = Group::Other;
  std::vector<std::size_t> members;  ///< feature positions, in schema order
  Tensor output;                     ///< [F_g×D]
  std::vector<HeadWeights> layers;   ///< empty when no layers are applied
};

using GroupStacks = std::array<std::vector<AttentionLayerParams>, kGroupCount>;

/// Gathers each active group's features into a sub-sequence and applies that
/// group's own attention stack. Groups are returned in canonical order.
inline std::vector<GroupAttentionOutput> intra_group_attention(const Tensor& features,
                                                               const GroupPartition& partition,
                                                               const GroupStacks& stacks,
                                                               std::span<const Group> active) {
  if (partition.feature_groups.size() != features.rows()) {
    throw SchemaError("group partition covers " +
                      std::to_string(partition.feature_groups.size()) + " features but input has " +
                      std::to_string(features.rows()));
  }
  std::vector<GroupAttentionOutput> out;
  for (Group g : active) {
    GroupAttentionOutput go;
    go.group = g;
    go.members = partition.members(g);
    if (go.members.empty()) {
      throw SchemaError("group " + std::string(group_name(g)) + " has no features");
    }
    const Tensor gathered = gather_rows(features, go.members);
    StackResult r = apply_attention_stack(gathered, stacks[group_index(g)]);
    go.output = r.output;
    go.layers = std::move(r.layers);
    out.push_back(std::move(go));
  }
  return out;
}

/// Mean-pools each group to one token and applies self-attention across the
/// group tokens. Returns the [G×D] result.
inline StackResult inter_group_attention(std::span<const Tensor> group_outputs,
                                         std::span<const AttentionLayerParams> layers) {
  std::vector<Tensor> tokens;
  tokens.reserve(group_outputs.size());
  for (const auto& g : group_outputs) tokens.push_back(mean_rows(g));
  return apply_attention_stack(concat_rows(tokens), layers);
}

/// fused·W + b, with fused a [1×K] row.
inline Tensor prediction_head(const Tensor& fused, const Tensor& weight, const Tensor& bias) {
  return add_row(matmul(fused, weight), bias);
}

}  // namespace mac
