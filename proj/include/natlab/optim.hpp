#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "natlab/errors.hpp"
#include "natlab/param.hpp"
#include "natlab/tensor.hpp"

namespace natlab {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

// First/second moment buffers, one pair per parameter in store order.
template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m;
    std::vector<Tensor<T>> v;
    std::int64_t step = 0;

    explicit AdamState(ParamStore<T>& params) {
        m.reserve(params.size());
        v.reserve(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m.emplace_back(params[i].value.shape);
            v.emplace_back(params[i].value.shape);
        }
    }
};

// One Adam update with bias correction. Gradients are consumed: they are
// zeroed after the step.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, const AdamHyper& h) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter<T>& p = params[i];
        Tensor<T>& m = state.m[i];
        Tensor<T>& v = state.v[i];
        for (std::size_t k = 0; k < p.value.data.size(); ++k) {
            const double g = static_cast<double>(p.grad.data[k]);
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient in parameter " + p.name);
            const double mk = h.beta1 * static_cast<double>(m.data[k]) + (1.0 - h.beta1) * g;
            const double vk = h.beta2 * static_cast<double>(v.data[k]) + (1.0 - h.beta2) * g * g;
            m.data[k] = static_cast<T>(mk);
            v.data[k] = static_cast<T>(vk);
            const double update = h.lr * (mk / bc1) / (std::sqrt(vk / bc2) + h.eps);
            p.value.data[k] = static_cast<T>(static_cast<double>(p.value.data[k]) - update);
        }
        p.zero_grad();
    }
}

}  // namespace natlab
