// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "radn/model.hpp"

namespace radn {

// ADAM with bias correction. Moment buffers are parallel to the parameter
// list; gradients are zeroed after each applied step.
template <typename T>
struct AdamStateT {
    std::uint64_t step = 0;
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    void init(const ModelParamsT<T>& params) {
        step = 0;
        m.clear();
        v.clear();
        for (const auto& [_, t] : params.entries()) {
            m.emplace_back(t.numel(), T(0));
            v.emplace_back(t.numel(), T(0));
        }
    }
};

using AdamState = AdamStateT<float>;

// lr schedule: init * decay^(epoch / decay_every), integer division.
inline double lr_at_epoch(double lr_init, double decay, std::size_t decay_every,
                          std::size_t epoch) {
    double lr = lr_init;
    for (std::size_t i = 0; i < epoch / decay_every; ++i) lr *= decay;
    return lr;
}

template <typename T>
void adam_step(ModelParamsT<T>& params, AdamStateT<T>& state, T lr) {
    if (state.m.size() != params.size()) state.init(params);
    ++state.step;
    const T b1 = state.beta1, b2 = state.beta2;
    T b1t = T(1), b2t = T(1);
    for (std::uint64_t i = 0; i < state.step; ++i) {
        b1t *= b1;
        b2t *= b2;
    }
    std::size_t idx = 0;
    for (auto& [name, t] : params.entries()) {
        if (!t.requires_grad()) {
            ++idx;
            continue;
        }
        auto& g = t.node()->grad;
        if (g.size() != t.numel())
            throw Error("adam_step: missing gradient for parameter '" + name + "'");
        auto& m = state.m[idx];
        auto& v = state.v[idx];
        auto& w = t.data();
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const T mhat = m[j] / (T(1) - b1t);
            const T vhat = v[j] / (T(1) - b2t);
            w[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
        std::fill(g.begin(), g.end(), T(0));
        ++idx;
    }
}

}  // namespace radn
