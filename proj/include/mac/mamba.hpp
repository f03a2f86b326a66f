#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mac/autodiff.hpp"
#include "mac/ssm.hpp"

namespace mac {

/// y[t,d] = gain[d]·x[t,d] / sqrt(mean_d(x[t,·]²) + eps).
inline Tensor rmsnorm(const Tensor& x, const Tensor& gain, double eps) {
  const std::size_t steps = x.rows(), width = x.cols();
  if (gain.size() != width) {
    throw DimensionError("rmsnorm: gain " + shape_string(gain.shape()) +
                         " does not match input " + shape_string(x.shape()));
  }
  if (eps < 0.0) throw ContractError("rmsnorm: eps must be non-negative");
  std::vector<double> out(steps * width);
  std::vector<double> inv_rms(steps);
  auto xd = x.data();
  auto gd = gain.data();
  for (std::size_t t = 0; t < steps; ++t) {
    double ss = 0.0;
    for (std::size_t d = 0; d < width; ++d) ss += xd[t * width + d] * xd[t * width + d];
    const double denom = std::sqrt(ss / static_cast<double>(width) + eps);
    inv_rms[t] = denom > 0.0 ? 1.0 / denom : 0.0;
    for (std::size_t d = 0; d < width; ++d) {
      out[t * width + d] = gd[d] * xd[t * width + d] * inv_rms[t];
    }
  }
  return make_op(x.shape(), std::move(out), {x, gain},
                 [x, gain, steps, width, inv_rms = std::move(inv_rms)](std::span<const double> g) {
                   auto xd = x.data();
                   auto gd = gain.data();
                   const double inv_width = 1.0 / static_cast<double>(width);
                   std::span<double> gx, gg;
                   if (x.requires_grad()) gx = x.grad_sink();
                   if (gain.requires_grad()) gg = gain.grad_sink();
                   for (std::size_t t = 0; t < steps; ++t) {
                     const double r = inv_rms[t];
                     double dot = 0.0;
                     for (std::size_t d = 0; d < width; ++d) {
                       const std::size_t i = t * width + d;
                       dot += g[i] * gd[d] * xd[i];
                       if (!gg.empty()) gg[d] += g[i] * xd[i] * r;
                     }
                     if (gx.empty()) continue;
                     const double coeff = dot * r * r * r * inv_width;
                     for (std::size_t d = 0; d < width; ++d) {
                       const std::size_t i = t * width + d;
                       gx[i] += g[i] * gd[d] * r - coeff * xd[i];
                     }
                   }
                 });
}

/// Parameters of one Mamba block with model width D, inner width E = S·D,
/// state size N and convolution width W.
struct MambaBlockParams {
  Tensor rms_gain;     ///< [1×D]
  Tensor in_proj;      ///< [D×E]
  Tensor conv_kernel;  ///< [W×E]
  Tensor conv_bias;    ///< [1×E]
  SelectionProjections selection;
  Tensor out_proj;     ///< [E×D]
  double rms_epsilon = 1e-6;

  std::size_t model_width() const { return in_proj.rows(); }
  std::size_t inner_width() const { return in_proj.cols(); }
  std::size_t state_size() const { return selection.a_log.cols(); }
};

/// Intermediate stage outputs, kept for inspection in tests.
struct MambaStages {
  Tensor x1, x2, x3, gated, projected, y;
};

/// RMSNorm and input projection, causal convolution, selective SSM with
/// SiLU, SiLU gate from the projected input, output projection, residual.
///
/// The gate multiplies at the inner width E before the output projection;
/// with S > 1 the projected input is E wide while the block output is D wide.
inline MambaStages mamba_stages(const Tensor& x, const MambaBlockParams& p) {
  const std::size_t width = p.model_width();
  if (x.shape().size() != 2 || x.cols() != width || p.out_proj.cols() != width ||
      p.out_proj.rows() != p.inner_width() || p.conv_kernel.cols() != p.inner_width()) {
    throw DimensionError("mamba_forward: input " + shape_string(x.shape()) +
                         " incompatible with block of width " + std::to_string(width) +
                         " and inner width " + std::to_string(p.inner_width()));
  }
  MambaStages s;
  s.x1 = matmul(rmsnorm(x, p.rms_gain, p.rms_epsilon), p.in_proj);
  s.x2 = add_row(causal_depthwise_conv(s.x1, p.conv_kernel), p.conv_bias);
  s.x3 = silu(selective_ssm(s.x2, p.selection));
  s.gated = mul(s.x3, silu(s.x1));
  s.projected = matmul(s.gated, p.out_proj);
  s.y = add(s.projected, x);
  return s;
}

inline Tensor mamba_forward(const Tensor& x, const MambaBlockParams& p) {
  return mamba_stages(x, p).y;
}

/// Number of scalar parameters in one block.
inline std::size_t mamba_parameter_count(std::size_t width, std::size_t expansion,
                                         std::size_t states, std::size_t conv_width) {
  const std::size_t inner = expansion * width;
  return width                      // rms gain
         + width * inner            // in_proj
         + conv_width * inner       // conv kernel
         + inner                    // conv bias
         + inner * inner + inner    // Δ projection
         + 2 * (inner * states + states)  // B and C projections
         + inner * states           // a_log
         + inner * width;           // out_proj
}

/// Initializes a block: linear maps uniform in ±1/sqrt(fan_in), A = -(i+1),
/// Δ bias so softplus gives Δ log-uniform in [0.01, 0.1], zero out_proj.
inline MambaBlockParams init_mamba_block(std::size_t width, std::size_t expansion,
                                         std::size_t states, std::size_t conv_width, Rng& rng,
                                         double rms_epsilon = 1e-6) {
  const std::size_t inner = expansion * width;
  auto uniform = [&rng](std::size_t rows, std::size_t cols, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::vector<double> v(rows * cols);
    for (auto& x : v) x = rng.uniform(-bound, bound);
    return Tensor::matrix(rows, cols, std::move(v), true);
  };
  MambaBlockParams p;
  p.rms_epsilon = rms_epsilon;
  p.rms_gain = Tensor::matrix(1, width, std::vector<double>(width, 1.0), true);
  p.in_proj = uniform(width, inner, width);
  p.conv_kernel = uniform(conv_width, inner, conv_width);
  p.conv_bias = uniform(1, inner, conv_width);
  p.selection.w_delta = uniform(inner, inner, inner);
  std::vector<double> dt_bias(inner);
  for (auto& v : dt_bias) {
    const double dt = std::exp(rng.uniform(std::log(0.01), std::log(0.1)));
    v = dt + std::log(-std::expm1(-dt));  // inverse softplus
  }
  p.selection.b_delta = Tensor::matrix(1, inner, std::move(dt_bias), true);
  p.selection.w_b = uniform(inner, states, inner);
  p.selection.b_b = Tensor::zeros({1, states}, true);
  p.selection.w_c = uniform(inner, states, inner);
  p.selection.b_c = Tensor::zeros({1, states}, true);
  std::vector<double> a_log(inner * states);
  for (std::size_t e = 0; e < inner; ++e) {
    for (std::size_t n = 0; n < states; ++n) a_log[e * states + n] = std::log(static_cast<double>(n + 1));
  }
  p.selection.a_log = Tensor::matrix(inner, states, std::move(a_log), true);
  p.out_proj = Tensor::zeros({inner, width}, true);
  return p;
}

template <class Fn>
void for_each_parameter(MambaBlockParams& p, const std::string& prefix, Fn&& fn) {
  fn(prefix + "rms_gain", p.rms_gain);
  fn(prefix + "in_proj", p.in_proj);
  fn(prefix + "conv_kernel", p.conv_kernel);
  fn(prefix + "conv_bias", p.conv_bias);
  fn(prefix + "w_delta", p.selection.w_delta);
  fn(prefix + "b_delta", p.selection.b_delta);
  fn(prefix + "w_b", p.selection.w_b);
  fn(prefix + "b_b", p.selection.b_b);
  fn(prefix + "w_c", p.selection.w_c);
  fn(prefix + "b_c", p.selection.b_c);
  fn(prefix + "a_log", p.selection.a_log);
  fn(prefix + "out_proj", p.out_proj);
}

}  // namespace mac
