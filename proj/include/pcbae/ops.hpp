#pragma once

// Forward and backward kernels for the layers of the autoencoder.
// All tensors are NCHW float32. Functions are pure except where a state
// object is passed by reference (batch-norm running statistics).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pcbae/gemm.hpp"
#include "pcbae/tensor.hpp"

namespace pcbae {

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// Elementwise activations

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.values()) v = v > 0.0f ? v : 0.0f;
  return y;
}

inline Tensor relu_backward(const Tensor& grad_out, const Tensor& x) {
  require_shape(grad_out, x.shape(), "relu_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(x[i] > 0.0f)) g[i] = 0.0f;
  }
  return g;
}

inline float sigmoid(float x) {
  if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
  const float e = std::exp(x);
  return e / (1.0f + e);
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.values()) v = sigmoid(v);
  return y;
}

/// Backward of sigmoid given its output `y`.
inline Tensor sigmoid_backward(const Tensor& grad_out, const Tensor& y) {
  require_shape(grad_out, y.shape(), "sigmoid_backward");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0f - y[i]);
  return g;
}

// ---------------------------------------------------------------------------
// Binary cross-entropy

inline constexpr double kBceClamp = 1e-7;

/// Mean binary cross-entropy, -(1/N) sum[y log p + (1-y) log(1-p)], with p
/// clamped to [1e-7, 1-1e-7].
inline double bce_loss(const Tensor& pred, const Tensor& target) {
  require_shape(target, pred.shape(), "bce_loss");
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp<double>(pred[i], kBceClamp, 1.0 - kBceClamp);
    const double y = target[i];
    sum -= y * std::log(p) + (1.0 - y) * std::log1p(-p);
  }
  return sum / static_cast<double>(pred.size());
}

/// Gradient of bce_loss with respect to `pred` (clamped values).
inline Tensor bce_backward(const Tensor& pred, const Tensor& target) {
  require_shape(target, pred.shape(), "bce_backward");
  Tensor g(pred.shape());
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double p = std::clamp<double>(pred[i], kBceClamp, 1.0 - kBceClamp);
    const double y = target[i];
    g[i] = static_cast<float>((p - y) / (p * (1.0 - p)) * inv_n);
  }
  return g;
}

/// Gradient of bce_loss(sigmoid(z), target) with respect to the logits z,
/// given the sigmoid output. Equals sigmoid_backward(bce_backward(...)) away
/// from the clamp, without the cancellation near 0 and 1.
inline Tensor sigmoid_bce_backward(const Tensor& prob, const Tensor& target) {
  require_shape(target, prob.shape(), "sigmoid_bce_backward");
  Tensor g(prob.shape());
  const float inv_n = 1.0f / static_cast<float>(prob.size());
  for (std::size_t i = 0; i < prob.size(); ++i) g[i] = (prob[i] - target[i]) * inv_n;
  return g;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)

struct Extent2 {
  std::size_t h = 1;
  std::size_t w = 1;
  friend bool operator==(const Extent2&, const Extent2&) = default;
};

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Extent2 kernel{3, 3};
  Extent2 stride{1, 1};
  Extent2 padding{0, 0};

  /// Stride-1 convolution that preserves spatial size (odd kernels).
  static ConvSpec same(std::size_t in_c, std::size_t out_c, std::size_t k) {
    return ConvSpec{in_c, out_c, {k, k}, {1, 1}, {k / 2, k / 2}};
  }

  void validate() const {
    if (in_channels == 0 || out_channels == 0) throw Error("ConvSpec: channel counts must be >= 1");
    if (kernel.h == 0 || kernel.w == 0) throw Error("ConvSpec: kernel dims must be >= 1");
    if (stride.h == 0 || stride.w == 0) throw Error("ConvSpec: stride dims must be >= 1");
  }

  Shape weight_shape() const { return {out_channels, in_channels, kernel.h, kernel.w}; }

  std::size_t out_size(std::size_t in, std::size_t k, std::size_t s, std::size_t p) const {
    const std::size_t padded = in + 2 * p;
    if (padded < k) throw ShapeError("conv2d: output size < 1");
    return (padded - k) / s + 1;
  }
  std::size_t out_h(std::size_t in) const { return out_size(in, kernel.h, stride.h, padding.h); }
  std::size_t out_w(std::size_t in) const { return out_size(in, kernel.w, stride.w, padding.w); }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

namespace detail {

// Valid output-column range [lo, hi) for kernel column kj so that the input
// column ox*stride + kj - pad stays inside [0, width).
inline void valid_cols(std::size_t kj, const ConvSpec& spec, std::size_t width,
                       std::size_t out_w, std::size_t& lo, std::size_t& hi) {
  const long s = static_cast<long>(spec.stride.w);
  const long off = static_cast<long>(kj) - static_cast<long>(spec.padding.w);
  long first = off >= 0 ? 0 : (-off + s - 1) / s;
  long last = (static_cast<long>(width) - 1 - off) / s;  // inclusive
  if (static_cast<long>(width) - 1 - off < 0) last = -1;
  last = std::min(last, static_cast<long>(out_w) - 1);
  lo = static_cast<std::size_t>(std::max(first, 0L));
  hi = last < first ? lo : static_cast<std::size_t>(last + 1);
}

// For output rows [oy0, oy1):
// cols[(c*kh + ki)*kw + kj][(oy - oy0)*out_w + ox] = x[c][oy*sh - ph + ki][ox*sw - pw + kj]
inline void im2col(const float* x, std::size_t channels, std::size_t height,
                   std::size_t width, const ConvSpec& spec, std::size_t out_w,
                   std::size_t oy0, std::size_t oy1, float* cols) {
  const long H = static_cast<long>(height);
  const std::size_t cols_per_row = (oy1 - oy0) * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    const float* xc = x + c * height * width;
    for (std::size_t ki = 0; ki < spec.kernel.h; ++ki) {
      for (std::size_t kj = 0; kj < spec.kernel.w; ++kj) {
        float* row = cols + ((c * spec.kernel.h + ki) * spec.kernel.w + kj) * cols_per_row;
        std::size_t lo, hi;
        valid_cols(kj, spec, width, out_w, lo, hi);
        const long off = static_cast<long>(kj) - static_cast<long>(spec.padding.w);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const long iy = static_cast<long>(oy * spec.stride.h + ki) - static_cast<long>(spec.padding.h);
          float* dst = row + (oy - oy0) * out_w;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + out_w, 0.0f);
            continue;
          }
          const float* src = xc + iy * static_cast<long>(width);
          std::fill(dst, dst + lo, 0.0f);
          if (spec.stride.w == 1) {
            std::copy(src + static_cast<long>(lo) + off, src + static_cast<long>(hi) + off, dst + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) {
              dst[ox] = src[static_cast<long>(ox * spec.stride.w) + off];
            }
          }
          std::fill(dst + hi, dst + out_w, 0.0f);
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image gradient.
inline void col2im(const float* cols, std::size_t channels, std::size_t height,
                   std::size_t width, const ConvSpec& spec, std::size_t out_w,
                   std::size_t oy0, std::size_t oy1, float* x) {
  const long H = static_cast<long>(height);
  const std::size_t cols_per_row = (oy1 - oy0) * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    float* xc = x + c * height * width;
    for (std::size_t ki = 0; ki < spec.kernel.h; ++ki) {
      for (std::size_t kj = 0; kj < spec.kernel.w; ++kj) {
        const float* row = cols + ((c * spec.kernel.h + ki) * spec.kernel.w + kj) * cols_per_row;
        std::size_t lo, hi;
        valid_cols(kj, spec, width, out_w, lo, hi);
        const long off = static_cast<long>(kj) - static_cast<long>(spec.padding.w);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const long iy = static_cast<long>(oy * spec.stride.h + ki) - static_cast<long>(spec.padding.h);
          if (iy < 0 || iy >= H) continue;
          const float* __restrict src = row + (oy - oy0) * out_w;
          float* __restrict dst = xc + iy * static_cast<long>(width) + off;
          if (spec.stride.w == 1) {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * spec.stride.w] += src[ox];
          }
        }
      }
    }
  }
}

// Output rows per im2col tile, sized so the column buffer stays near 256 KiB.
inline std::size_t conv_tile_rows(std::size_t K, std::size_t out_h, std::size_t out_w) {
  constexpr std::size_t kTargetFloats = 64 * 1024;
  const std::size_t rows = kTargetFloats / std::max<std::size_t>(1, K * out_w);
  return std::clamp<std::size_t>(rows, 1, out_h);
}

inline void check_conv_args(const Tensor& x, const Tensor& weights, const ConvSpec& spec,
                            const char* what) {
  spec.validate();
  require_rank(x, 4, what);
  if (x.dim(1) != spec.in_channels) {
    throw ShapeError(std::string(what) + ": input has " + std::to_string(x.dim(1)) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  }
  require_shape(weights, spec.weight_shape(), what);
}

}  // namespace detail

inline Tensor conv2d_forward(const Tensor& x, const Tensor& weights, const Tensor& bias,
                             const ConvSpec& spec) {
  detail::check_conv_args(x, weights, spec, "conv2d_forward");
  require_shape(bias, {spec.out_channels}, "conv2d_forward bias");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = spec.out_h(H), OW = spec.out_w(W);
  const std::size_t P = OH * OW;
  const std::size_t K = C * spec.kernel.h * spec.kernel.w;
  const std::size_t O = spec.out_channels;

  Tensor y({N, O, OH, OW});
  const std::size_t tile = detail::conv_tile_rows(K, OH, OW);
  std::vector<float> cols(K * tile * OW);
  for (std::size_t n = 0; n < N; ++n) {
    float* yn = y.data() + n * O * P;
    for (std::size_t o = 0; o < O; ++o) std::fill(yn + o * P, yn + (o + 1) * P, bias[o]);
    for (std::size_t oy0 = 0; oy0 < OH; oy0 += tile) {
      const std::size_t oy1 = std::min(OH, oy0 + tile);
      const std::size_t Pt = (oy1 - oy0) * OW;
      detail::im2col(x.data() + n * C * H * W, C, H, W, spec, OW, oy0, oy1, cols.data());
      detail::gemm_nn(O, Pt, K, weights.data(), K, cols.data(), Pt, yn + oy0 * OW, P);
    }
  }
  return y;
}

struct ConvGrads {
  Tensor grad_x;
  Tensor grad_w;
  Tensor grad_b;
};

/// Gradients of sum(grad_out * conv2d_forward(x, weights, b)) with respect to
/// the input, the weights and the bias.
inline ConvGrads conv2d_backward(const Tensor& grad_out, const Tensor& x, const Tensor& weights,
                                 const ConvSpec& spec) {
  detail::check_conv_args(x, weights, spec, "conv2d_backward");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = spec.out_h(H), OW = spec.out_w(W);
  const std::size_t P = OH * OW;
  const std::size_t K = C * spec.kernel.h * spec.kernel.w;
  const std::size_t O = spec.out_channels;
  require_shape(grad_out, {N, O, OH, OW}, "conv2d_backward grad_out");

  ConvGrads g{Tensor(x.shape()), Tensor(weights.shape()), Tensor({O})};

  // W^T, laid out K x O, so the input gradient is a plain gemm_nn.
  std::vector<float> wt(K * O);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t k = 0; k < K; ++k) wt[k * O + o] = weights[o * K + k];

  const std::size_t tile = detail::conv_tile_rows(K, OH, OW);
  std::vector<float> cols(K * tile * OW);
  std::vector<float> gy_tile(O * tile * OW);
  for (std::size_t n = 0; n < N; ++n) {
    const float* gy = grad_out.data() + n * O * P;
    for (std::size_t o = 0; o < O; ++o) {
      double s = 0.0;
      for (std::size_t p = 0; p < P; ++p) s += gy[o * P + p];
      g.grad_b[o] += static_cast<float>(s);
    }
    for (std::size_t oy0 = 0; oy0 < OH; oy0 += tile) {
      const std::size_t oy1 = std::min(OH, oy0 + tile);
      const std::size_t Pt = (oy1 - oy0) * OW;
      // Contiguous copy of this tile of the output gradient.
      for (std::size_t o = 0; o < O; ++o) {
        std::copy(gy + o * P + oy0 * OW, gy + o * P + oy0 * OW + Pt, gy_tile.data() + o * Pt);
      }
      detail::im2col(x.data() + n * C * H * W, C, H, W, spec, OW, oy0, oy1, cols.data());
      detail::gemm_nt(O, K, Pt, gy_tile.data(), Pt, cols.data(), Pt, g.grad_w.data(), K);

      std::fill(cols.begin(), cols.begin() + K * Pt, 0.0f);
      detail::gemm_nn(K, Pt, O, wt.data(), O, gy_tile.data(), Pt, cols.data(), Pt);
      detail::col2im(cols.data(), C, H, W, spec, OW, oy0, oy1, g.grad_x.data() + n * C * H * W);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Max pooling

struct PoolResult {
  Tensor output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

inline PoolResult maxpool2d(const Tensor& x, std::size_t window = 2, std::size_t stride = 2) {
  require_rank(x, 4, "maxpool2d");
  if (window == 0 || stride == 0) throw Error("maxpool2d: window and stride must be >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % stride != 0 || W % stride != 0 || window > H || window > W) {
    throw ShapeError("maxpool2d: spatial dims " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by stride " + std::to_string(stride));
  }
  const std::size_t OH = (H - window) / stride + 1, OW = (W - window) / stride + 1;
  PoolResult r{Tensor({N, C, OH, OW}), std::vector<std::uint32_t>(N * C * OH * OW)};
  std::size_t out = 0;
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const std::size_t base = nc * H * W;
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox, ++out) {
        std::size_t best = base + oy * stride * W + ox * stride;
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = base + (oy * stride + dy) * W + ox * stride + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        r.output[out] = x[best];
        r.argmax[out] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return r;
}

inline Tensor maxpool2d_backward(const Tensor& grad_out, const std::vector<std::uint32_t>& argmax,
                                 const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) throw ShapeError("maxpool2d_backward: argmax size mismatch");
  Tensor g(input_shape);
  for (std::size_t i = 0; i < grad_out.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling

inline Tensor upsample_nearest(const Tensor& x, std::size_t factor = 2) {
  require_rank(x, 4, "upsample_nearest");
  if (factor == 0) throw Error("upsample_nearest: factor must be >= 1");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = H * factor, OW = W * factor;
  Tensor y({N, C, OH, OW});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const float* src = x.data() + nc * H * W;
    float* dst = y.data() + nc * OH * OW;
    for (std::size_t oy = 0; oy < OH; ++oy) {
      const float* srow = src + (oy / factor) * W;
      float* drow = dst + oy * OW;
      for (std::size_t ox = 0; ox < OW; ++ox) drow[ox] = srow[ox / factor];
    }
  }
  return y;
}

inline Tensor upsample_nearest_backward(const Tensor& grad_out, std::size_t factor = 2) {
  require_rank(grad_out, 4, "upsample_nearest_backward");
  if (factor == 0) throw Error("upsample_nearest_backward: factor must be >= 1");
  const std::size_t N = grad_out.dim(0), C = grad_out.dim(1), OH = grad_out.dim(2),
                    OW = grad_out.dim(3);
  if (OH % factor != 0 || OW % factor != 0) {
    throw ShapeError("upsample_nearest_backward: gradient dims not divisible by factor");
  }
  const std::size_t H = OH / factor, W = OW / factor;
  Tensor g({N, C, H, W});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const float* src = grad_out.data() + nc * OH * OW;
    float* dst = g.data() + nc * H * W;
    for (std::size_t oy = 0; oy < OH; ++oy) {
      float* drow = dst + (oy / factor) * W;
      const float* srow = src + oy * OW;
      for (std::size_t ox = 0; ox < OW; ++ox) drow[ox / factor] += srow[ox];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Batch normalization

struct BatchNormState {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  float epsilon = 1e-5f;
  float momentum = 0.1f;

  static BatchNormState identity(std::size_t channels) {
    return BatchNormState{Tensor({channels}, 1.0f), Tensor({channels}, 0.0f),
                          Tensor({channels}, 0.0f), Tensor({channels}, 1.0f)};
  }
  std::size_t channels() const { return gamma.size(); }
};

struct BatchNormCache {
  Tensor x_hat;
  std::vector<float> inv_std;
};

/// Inference-mode batch norm: normalizes with the running statistics.
inline Tensor batchnorm_infer(const Tensor& x, const BatchNormState& state) {
  require_rank(x, 4, "batchnorm_infer");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (C != state.channels()) {
    throw ShapeError("batchnorm_infer: input has " + std::to_string(C) + " channels, state has " +
                     std::to_string(state.channels()));
  }
  Tensor y(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const double mean = state.running_mean[c];
    const double var = std::max(0.0f, state.running_var[c]);
    const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(state.epsilon));
    const float g = state.gamma[c], b = state.beta[c];
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        y[off + i] = g * static_cast<float>((x[off + i] - mean) * inv_std) + b;
      }
    }
  }
  return y;
}

/// Train mode normalizes with batch statistics (biased variance) and folds
/// them into the running statistics (unbiased variance); infer mode uses the
/// running statistics. `cache` is filled in train mode when given.
inline Tensor batchnorm_forward(const Tensor& x, BatchNormState& state, Mode mode,
                                BatchNormCache* cache = nullptr) {
  require_rank(x, 4, "batchnorm_forward");
  const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (C != state.channels() || state.beta.size() != C || state.running_mean.size() != C ||
      state.running_var.size() != C) {
    throw ShapeError("batchnorm_forward: input has " + std::to_string(C) +
                     " channels, state has " + std::to_string(state.channels()));
  }
  if (mode == Mode::infer) return batchnorm_infer(x, state);
  Tensor y(x.shape());
  if (cache) {
    cache->x_hat = Tensor(x.shape());
    cache->inv_std.assign(C, 0.0f);
  }
  const double M = static_cast<double>(N * HW);
  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const float* p = x.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) s += p[i];
      }
      mean = s / M;
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const float* p = x.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = p[i] - mean;
          ss += d * d;
        }
      }
      var = ss / M;
      const double unbiased = M > 1.0 ? ss / (M - 1.0) : var;
      const double m = state.momentum;
      state.running_mean[c] = static_cast<float>((1.0 - m) * state.running_mean[c] + m * mean);
      state.running_var[c] = static_cast<float>((1.0 - m) * state.running_var[c] + m * unbiased);
    }
    const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(state.epsilon));
    const float g = state.gamma[c], b = state.beta[c];
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const float xh = static_cast<float>((x[off + i] - mean) * inv_std);
        y[off + i] = g * xh + b;
        if (cache) cache->x_hat[off + i] = xh;
      }
    }
    if (cache) cache->inv_std[c] = static_cast<float>(inv_std);
  }
  return y;
}

struct BatchNormGrads {
  Tensor grad_x;
  Tensor grad_gamma;
  Tensor grad_beta;
};

/// Backward of train-mode batchnorm_forward.
inline BatchNormGrads batchnorm_backward(const Tensor& grad_out, const BatchNormCache& cache,
                                         const BatchNormState& state) {
  require_shape(grad_out, cache.x_hat.shape(), "batchnorm_backward");
  const std::size_t N = grad_out.dim(0), C = grad_out.dim(1), HW = grad_out.dim(2) * grad_out.dim(3);
  if (C != state.channels() || cache.inv_std.size() != C) {
    throw ShapeError("batchnorm_backward: channel mismatch");
  }
  BatchNormGrads g{Tensor(grad_out.shape()), Tensor({C}), Tensor({C})};
  const double M = static_cast<double>(N * HW);
  for (std::size_t c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        sum_dy += grad_out[off + i];
        sum_dy_xh += static_cast<double>(grad_out[off + i]) * cache.x_hat[off + i];
      }
    }
    g.grad_beta[c] = static_cast<float>(sum_dy);
    g.grad_gamma[c] = static_cast<float>(sum_dy_xh);
    const double k = static_cast<double>(state.gamma[c]) * cache.inv_std[c] / M;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        g.grad_x[off + i] = static_cast<float>(
            k * (M * grad_out[off + i] - sum_dy - cache.x_hat[off + i] * sum_dy_xh));
      }
    }
  }
  return g;
}

}  // namespace pcbae
