#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mac/attention.hpp"
#include "mac/autodiff.hpp"
#include "mac/mamba.hpp"
#include "mac/random.hpp"
#include "mac/ssm.hpp"

namespace mac::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

/// Fixed random weights so that every op is checked through a generic
/// scalar reduction rather than a plain sum.
inline Tensor reduce(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<double> w(y.size());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return weighted_sum(y, w);
}

inline DiscreteSsm random_lti(Rng& rng, std::size_t states) {
  SsmParams p;
  for (std::size_t n = 0; n < states; ++n) {
    p.a.push_back(-rng.uniform(0.05, 3.0));
    p.b.push_back(rng.uniform(-1.0, 1.0));
    p.c.push_back(rng.uniform(-1.0, 1.0));
  }
  p.delta = rng.uniform(0.01, 1.0);
  return discretize_zoh(p);
}

// A block with every parameter random, including out_proj. Δ is kept away
// from its tiny initial range so that no gradient sinks below the rounding
// floor of central differences.
inline MambaBlockParams random_block(std::size_t width, std::size_t expansion, std::size_t states,
                                     std::size_t conv_width, Rng& rng) {
  MambaBlockParams p = init_mamba_block(width, expansion, states, conv_width, rng);
  const std::size_t inner = width * expansion;
  p.rms_gain = random_tensor({1, width}, rng, 0.5, 1.5);
  p.out_proj = random_tensor({inner, width}, rng, -1.0, 1.0);
  p.conv_bias = random_tensor({1, inner}, rng, -0.3, 0.3);
  p.selection.b_b = random_tensor({1, states}, rng, -0.3, 0.3);
  p.selection.b_c = random_tensor({1, states}, rng, -0.3, 0.3);
  p.selection.w_b = random_tensor({inner, states}, rng, -1.0, 1.0);
  p.selection.w_c = random_tensor({inner, states}, rng, -1.0, 1.0);
  p.selection.b_delta = random_tensor({1, inner}, rng, -1.0, 1.0);
  p.selection.a_log = random_tensor({inner, states}, rng, -1.0, 1.0);
  return p;
}

inline std::vector<Tensor> block_tensors(MambaBlockParams& p) {
  std::vector<Tensor> out;
  for_each_parameter(p, "", [&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

inline AttentionLayerParams random_layer(std::size_t width, std::size_t heads, Rng& rng) {
  AttentionLayerParams p = init_attention_layer(width, heads, rng);
  p.w_o = random_tensor({width, width}, rng, -0.5, 0.5);
  p.norm_gain = random_tensor({1, width}, rng, 0.5, 1.5);
  return p;
}

}  // namespace mac::testing
