#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "natlab/autograd.hpp"
#include "natlab/rng.hpp"
#include "natlab/tensor.hpp"

namespace testsup {

inline natlab::Tensor<double> random_tensor(natlab::Rng& rng, std::size_t r, std::size_t c,
                                            double scale = 1.0) {
    natlab::Tensor<double> t = natlab::Tensor<double>::zeros(r, c);
    for (double& v : t.data) v = rng.normal() * scale;
    return t;
}

// Central finite differences (h = 1e-5, 64-bit) against the tape's
// analytic gradients. The builder must construct the same graph from any
// given input tensors and return a scalar.
using GraphBuilder = std::function<natlab::Var<double>(natlab::Tape<double>&,
                                                       std::vector<natlab::Var<double>>&)>;

inline double eval_scalar(const std::vector<natlab::Tensor<double>>& inputs,
                          const GraphBuilder& build) {
    natlab::Tape<double> tape;
    std::vector<natlab::Var<double>> vars;
    vars.reserve(inputs.size());
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    return build(tape, vars).value().data[0];
}

inline void check_gradients(std::vector<natlab::Tensor<double>> inputs, const GraphBuilder& build,
                            double h = 1e-5, double tol = 1e-4) {
    natlab::Tape<double> tape;
    std::vector<natlab::Var<double>> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t));
    natlab::Var<double> out = build(tape, vars);
    REQUIRE(out.value().numel() == 1);
    tape.backward(out);
    std::vector<natlab::Tensor<double>> analytic;
    for (const auto& v : vars) analytic.push_back(v.grad());

    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t k = 0; k < inputs[i].data.size(); ++k) {
            const double orig = inputs[i].data[k];
            inputs[i].data[k] = orig + h;
            const double fp = eval_scalar(inputs, build);
            inputs[i].data[k] = orig - h;
            const double fm = eval_scalar(inputs, build);
            inputs[i].data[k] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[i].data[k];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            INFO("input " << i << " element " << k << " analytic " << a << " numeric "
                          << numeric);
            REQUIRE(std::abs(a - numeric) / denom < tol);
        }
    }
}

}  // namespace testsup
