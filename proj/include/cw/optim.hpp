#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cw/rng.hpp"
#include "cw/tensor.hpp"

namespace cw {

// Uniform on [-L, L], L = sqrt(6 / (fan_in + fan_out)). Rank-1 shapes use
// fan_in = fan_out = n; bias tensors are zero-initialized by callers.
inline Tensor glorot_uniform_init(const Shape& shape, RngStream& rng) {
    require(!shape.empty(), "glorot_uniform_init: shape needs at least 1 axis");
    double fan_in, fan_out;
    if (shape.size() == 1) {
        fan_in = fan_out = static_cast<double>(shape[0]);
    } else {
        const double n = static_cast<double>(shape_numel(shape));
        fan_in = n / static_cast<double>(shape.back());
        fan_out = n / static_cast<double>(shape.front());
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.numel(); ++i)
        t[i] = (2.0 * rng.uniform() - 1.0) * limit;
    return t;
}

struct AdamState {
    std::int64_t step = 0;
    double learning_rate = 0.0005;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
    std::vector<Tensor> m;  // first moments, one per parameter
    std::vector<Tensor> v;  // second moments

    explicit AdamState(double lr = 0.0005) : learning_rate(lr) {
        require(lr > 0.0, "AdamState: learning rate must be positive");
    }
};

// Standard Adam update with bias correction. Moments are allocated on first
// use and must stay shape-aligned with their parameters afterwards.
inline void adam_step(std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                      AdamState& state) {
    require(params.size() == grads.size(), "adam_step: params/grads count mismatch");
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.push_back(Tensor::zeros(p->shape()));
            state.v.push_back(Tensor::zeros(p->shape()));
        }
    }
    require(state.m.size() == params.size(), "adam_step: moment count mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor& p = *params[t];
        const Tensor& g = *grads[t];
        require_same_shape(p, g, "adam_step");
        require_same_shape(p, state.m[t], "adam_step moments");
        Tensor& m = state.m[t];
        Tensor& v = state.v[t];
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

}  // namespace cw
