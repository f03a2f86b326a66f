#pragma once

// Diagonal state-space kernels: zero-order-hold discretization, the
// sequential recurrence, its global-convolution dual, and the selective
// (input-dependent) scan used inside the Mamba block.
//
// Output alignment: for an input sequence x_0..x_{T-1} the output element k
// is C·h_{k+1}, where h_{k+1} = Ā·h_k + B̄·x_k and h_0 = 0. Equivalently
// y[k] = Σ_{j≤k} K[k-j]·x[j] with K[0] = C·B̄.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mac/autodiff.hpp"
#include "mac/errors.hpp"

namespace mac {

/// Continuous single-channel SSM with a diagonal state matrix.
struct SsmParams {
  std::vector<double> a;  ///< diagonal of A, one entry per state, all < 0
  std::vector<double> b;  ///< input matrix B, one entry per state
  std::vector<double> c;  ///< output matrix C, one entry per state
  double delta = 0.0;     ///< timescale Δ > 0
};

struct DiscreteSsm {
  std::vector<double> a_bar;
  std::vector<double> b_bar;
  std::vector<double> c;
};

struct ConvKernel {
  std::vector<double> k_bar;
};

namespace zoh {

/// |Δ·a| below this uses the Taylor series for (exp(Δa) - 1)/a.
inline constexpr double kSeriesThreshold = 1e-8;

/// Input gain (exp(Δa) - 1)/a, the scalar factor multiplying b.
inline double input_gain(double delta, double a) {
  const double z = delta * a;
  if (std::abs(z) < kSeriesThreshold) return delta * (1.0 + z / 2.0 + z * z / 6.0);
  return std::expm1(z) / a;
}

/// Direct closed form without the series branch; used by tests.
inline double input_gain_direct(double delta, double a) { return (std::exp(delta * a) - 1.0) / a; }

/// Series form regardless of magnitude; used by tests.
inline double input_gain_series(double delta, double a) {
  const double z = delta * a;
  return delta * (1.0 + z / 2.0 + z * z / 6.0);
}

/// d(input_gain)/dΔ.
inline double input_gain_d_delta(double delta, double a) { return std::exp(delta * a); }

/// d(input_gain)/da.
inline double input_gain_d_a(double delta, double a) {
  const double z = delta * a;
  if (std::abs(z) < 1e-3) {
    return delta * delta * (0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0);
  }
  return (z * std::exp(z) - std::expm1(z)) / (a * a);
}

}  // namespace zoh

/// Zero-order-hold discretization of a diagonal SSM.
inline DiscreteSsm discretize_zoh(const SsmParams& params) {
  if (!(params.delta > 0.0)) {
    throw ContractError("discretize_zoh: delta must be positive, got " +
                        std::to_string(params.delta));
  }
  const std::size_t states = params.a.size();
  if (params.b.size() != states || params.c.size() != states) {
    throw DimensionError("discretize_zoh: a, b, c must have equal length");
  }
  DiscreteSsm out;
  out.a_bar.resize(states);
  out.b_bar.resize(states);
  out.c = params.c;
  for (std::size_t n = 0; n < states; ++n) {
    if (!(params.a[n] < 0.0)) {
      throw ContractError("discretize_zoh: state entries of A must be negative");
    }
    out.a_bar[n] = std::exp(params.delta * params.a[n]);
    out.b_bar[n] = zoh::input_gain(params.delta, params.a[n]) * params.b[n];
  }
  return out;
}

/// Runs the recurrence from a zero state.
inline std::vector<double> ssm_scan(const DiscreteSsm& d, std::span<const double> x) {
  const std::size_t states = d.a_bar.size();
  std::vector<double> h(states, 0.0);
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t k = 0; k < x.size(); ++k) {
    double acc = 0.0;
    for (std::size_t n = 0; n < states; ++n) {
      h[n] = d.a_bar[n] * h[n] + d.b_bar[n] * x[k];
      acc += d.c[n] * h[n];
    }
    y[k] = acc;
  }
  return y;
}

/// Taps K[j] = Σ_n c_n·ā_n^j·b̄_n for j < length.
inline ConvKernel ssm_conv_kernel(const DiscreteSsm& d, std::size_t length) {
  if (length < 1) throw ContractError("ssm_conv_kernel: length must be at least 1");
  const std::size_t states = d.a_bar.size();
  ConvKernel kernel;
  kernel.k_bar.assign(length, 0.0);
  std::vector<double> power(states, 1.0);
  for (std::size_t j = 0; j < length; ++j) {
    double tap = 0.0;
    for (std::size_t n = 0; n < states; ++n) {
      tap += d.c[n] * power[n] * d.b_bar[n];
      power[n] *= d.a_bar[n];
    }
    kernel.k_bar[j] = tap;
  }
  return kernel;
}

/// Causal convolution y[t] = Σ_{j≤t} K[j]·x[t-j]. Taps beyond the kernel
/// length are treated as zero.
inline std::vector<double> apply_global_conv(std::span<const double> x, const ConvKernel& k) {
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    const std::size_t taps = std::min(t + 1, k.k_bar.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < taps; ++j) acc += k.k_bar[j] * x[t - j];
    y[t] = acc;
  }
  return y;
}

/// Selective scan with position-dependent Δ, B and C.
///
///   x, delta: [T×E]   a: [E×N]   b, c: [T×N]   result: [T×E]
///
/// Channel e at step t is discretized with Δ[t,e] and a[e,·]; B and C rows
/// are shared across channels.
inline Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& a,
                             const Tensor& b, const Tensor& c) {
  const std::size_t steps = x.rows(), channels = x.cols(), states = a.cols();
  if (delta.shape() != x.shape() || a.rows() != channels || b.rows() != steps ||
      c.rows() != steps || b.cols() != states || c.cols() != states) {
    throw DimensionError("selective_scan: inconsistent shapes x" + shape_string(x.shape()) +
                         " delta" + shape_string(delta.shape()) + " a" +
                         shape_string(a.shape()) + " b" + shape_string(b.shape()) + " c" +
                         shape_string(c.shape()));
  }
  const std::size_t cube = steps * channels * states;
  std::vector<double> a_bar(cube), gain(cube), h(cube);
  std::vector<double> y(steps * channels, 0.0);
  auto xd = x.data();
  auto dd = delta.data();
  auto ad = a.data();
  auto bd = b.data();
  auto cd = c.data();
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t e = 0; e < channels; ++e) {
      const double dt = dd[t * channels + e];
      const double xv = xd[t * channels + e];
      double acc = 0.0;
      for (std::size_t n = 0; n < states; ++n) {
        const std::size_t i = (t * channels + e) * states + n;
        const double av = ad[e * states + n];
        a_bar[i] = std::exp(dt * av);
        gain[i] = zoh::input_gain(dt, av);
        const double prev = t > 0 ? h[i - channels * states] : 0.0;
        h[i] = a_bar[i] * prev + gain[i] * bd[t * states + n] * xv;
        acc += cd[t * states + n] * h[i];
      }
      y[t * channels + e] = acc;
    }
  }

  return make_op(
      {steps, channels}, std::move(y), {x, delta, a, b, c},
      [x, delta, a, b, c, steps, channels, states, a_bar = std::move(a_bar),
       gain = std::move(gain), h = std::move(h)](std::span<const double> g) {
        auto xd = x.data();
        auto dd = delta.data();
        auto ad = a.data();
        auto bd = b.data();
        auto cd = c.data();
        std::vector<double> gx(steps * channels, 0.0), gdelta(steps * channels, 0.0);
        std::vector<double> ga(channels * states, 0.0);
        std::vector<double> gb(steps * states, 0.0), gc(steps * states, 0.0);
        std::vector<double> carry(channels * states, 0.0);
        for (std::size_t t = steps; t-- > 0;) {
          for (std::size_t e = 0; e < channels; ++e) {
            const double gy = g[t * channels + e];
            const double dt = dd[t * channels + e];
            const double xv = xd[t * channels + e];
            for (std::size_t n = 0; n < states; ++n) {
              const std::size_t i = (t * channels + e) * states + n;
              const std::size_t s = e * states + n;
              const double av = ad[s];
              const double bv = bd[t * states + n];
              const double dh = carry[s] + gy * cd[t * states + n];
              gc[t * states + n] += gy * h[i];
              const double prev = t > 0 ? h[i - channels * states] : 0.0;
              const double d_abar = dh * prev;
              const double d_gain = dh * bv * xv;
              gb[t * states + n] += dh * gain[i] * xv;
              gx[t * channels + e] += dh * gain[i] * bv;
              gdelta[t * channels + e] += d_abar * av * a_bar[i] + d_gain * zoh::input_gain_d_delta(dt, av);
              ga[s] += d_abar * dt * a_bar[i] + d_gain * zoh::input_gain_d_a(dt, av);
              carry[s] = dh * a_bar[i];
            }
          }
        }
        auto accumulate = [](const Tensor& t, const std::vector<double>& src) {
          if (!t.requires_grad()) return;
          auto dst = t.grad_sink();
          for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
        };
        accumulate(x, gx);
        accumulate(delta, gdelta);
        accumulate(a, ga);
        accumulate(b, gb);
        accumulate(c, gc);
      });
}

/// Linear maps producing the selection signals from the scan input, plus the
/// log-parameterized state matrix (A = -exp(a_log)).
struct SelectionProjections {
  Tensor w_delta;  ///< [E×E]
  Tensor b_delta;  ///< [1×E], softplus bias
  Tensor w_b;      ///< [E×N]
  Tensor b_b;      ///< [1×N]
  Tensor w_c;      ///< [E×N]
  Tensor b_c;      ///< [1×N]
  Tensor a_log;    ///< [E×N]
};

/// Δ = softplus(x·W_Δ + b_Δ), B = x·W_B + b_B, C = x·W_C + b_C, then the
/// selective scan over x.
inline Tensor selective_ssm(const Tensor& x, const SelectionProjections& sel) {
  const Tensor delta = softplus(add_row(matmul(x, sel.w_delta), sel.b_delta));
  const Tensor b = add_row(matmul(x, sel.w_b), sel.b_b);
  const Tensor c = add_row(matmul(x, sel.w_c), sel.b_c);
  const Tensor a = scale(exp(sel.a_log), -1.0);
  return selective_scan(x, delta, a, b, c);
}

}  // namespace mac
