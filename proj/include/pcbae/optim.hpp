#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcbae/tensor.hpp"

namespace pcbae {

struct AdamOptions {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// First and second moment estimates, one pair per parameter tensor.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t step = 0;

  static AdamState for_params(std::span<Tensor* const> params) {
    AdamState s;
    for (const Tensor* p : params) {
      s.m.emplace_back(p->shape());
      s.v.emplace_back(p->shape());
    }
    return s;
  }
};

/// One bias-corrected Adam update, applied in place.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                      AdamState& state, const AdamOptions& opt) {
  if (params.size() != grads.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw ShapeError("adam_step: parameter/gradient/state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || state.m[i].shape() != grads[i].shape() ||
        state.v[i].shape() != grads[i].shape()) {
      throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i) + ": " +
                       shape_str(params[i]->shape()) + " vs gradient " +
                       shape_str(grads[i].shape()));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(opt.beta1, t)));
  const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(opt.beta2, t)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    float* w = params[i]->data();
    const float* g = grads[i].data();
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      m[j] = opt.beta1 * m[j] + (1.0f - opt.beta1) * g[j];
      v[j] = opt.beta2 * v[j] + (1.0f - opt.beta2) * g[j] * g[j];
      const float m_hat = m[j] * c1;
      const float v_hat = v[j] * c2;
      w[j] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
    }
  }
}

struct SgdOptions {
  float lr = 1e-2f;
  float momentum = 0.9f;
};

struct SgdState {
  std::vector<Tensor> velocity;

  static SgdState for_params(std::span<Tensor* const> params) {
    SgdState s;
    for (const Tensor* p : params) s.velocity.emplace_back(p->shape());
    return s;
  }
};

inline void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads,
                     SgdState& state, const SgdOptions& opt) {
  if (params.size() != grads.size() || state.velocity.size() != params.size()) {
    throw ShapeError("sgd_step: parameter/gradient/state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) throw ShapeError("sgd_step: shape mismatch");
    float* w = params[i]->data();
    float* vel = state.velocity[i].data();
    const float* g = grads[i].data();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      vel[j] = opt.momentum * vel[j] + g[j];
      w[j] -= opt.lr * vel[j];
    }
  }
}

}  // namespace pcbae
