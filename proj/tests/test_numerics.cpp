#include <cmath>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "natlab/autograd.hpp"
#include "natlab/optim.hpp"
#include "natlab/param.hpp"
#include "natlab/rng.hpp"
#include "natlab/tensor.hpp"
#include "support.hpp"

using namespace natlab;
using testsup::random_tensor;

namespace {

// Independent element-by-element product, the oracle for matmul.
Tensor<double> matmul_triple_loop(const Tensor<double>& a, const Tensor<double>& b) {
    Tensor<double> c = Tensor<double>::zeros(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j)
            for (std::size_t k = 0; k < a.cols(); ++k) c.at(i, j) += a.at(i, k) * b.at(k, j);
    return c;
}

Tensor<double> run_matmul(const Tensor<double>& a, const Tensor<double>& b) {
    Tape<double> tape;
    tape.check_finite = true;
    return matmul(tape.constant(a), tape.constant(b)).value();
}

}  // namespace

TEST_CASE("matmul identity and annihilator") {
    Rng rng(7);
    Tensor<double> a = random_tensor(rng, 3, 3);
    Tensor<double> eye = Tensor<double>::zeros(3, 3);
    for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
    Tensor<double> out = run_matmul(eye, a);
    for (std::size_t i = 0; i < out.data.size(); ++i) REQUIRE(out.data[i] == a.data[i]);

    Tensor<double> zero = Tensor<double>::zeros(3, 4);
    out = run_matmul(a, zero);
    for (double v : out.data) REQUIRE(v == 0.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
    Rng rng(11);
    const Tensor<double> a = random_tensor(rng, 3, 4);
    const Tensor<double> b = random_tensor(rng, 4, 2);
    const Tensor<double> got = run_matmul(a, b);
    const Tensor<double> want = matmul_triple_loop(a, b);
    for (std::size_t i = 0; i < got.data.size(); ++i)
        REQUIRE(std::abs(got.data[i] - want.data[i]) < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape<double> tape;
    Var<double> a = tape.constant(Tensor<double>::zeros(2, 3));
    Var<double> b = tape.constant(Tensor<double>::zeros(4, 2));
    REQUIRE_THROWS_WITH(matmul(a, b),
                        Catch::Matchers::ContainsSubstring("[2x3]") &&
                            Catch::Matchers::ContainsSubstring("[4x2]"));
}

TEST_CASE("softmax uniform row") {
    Tape<double> tape;
    Tensor<double> x = Tensor<double>::zeros(1, 3);
    Tensor<double> p = softmax_rows(tape.constant(x)).value();
    for (double v : p.data) REQUIRE(v == Catch::Approx(1.0 / 3.0).margin(1e-15));
}

TEST_CASE("softmax forces masked entry to exact zero") {
    Tape<double> tape;
    Tensor<double> x = Tensor<double>::zeros(1, 2);
    x.at(0, 0) = 1.7;
    x.at(0, 1) = neg_inf<double>();
    Tensor<double> p = softmax_rows(tape.constant(x)).value();
    REQUIRE(p.at(0, 0) == 1.0);
    REQUIRE(p.at(0, 1) == 0.0);
}

TEST_CASE("softmax matches direct exp/sum oracle") {
    Tape<double> tape;
    Tensor<double> x = Tensor<double>::zeros(1, 3);
    x.at(0, 0) = 1.0;
    x.at(0, 1) = 2.0;
    x.at(0, 2) = 3.0;
    Tensor<double> p = softmax_rows(tape.constant(x)).value();
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (std::size_t j = 0; j < 3; ++j)
        REQUIRE(std::abs(p.at(0, j) - std::exp(1.0 + j) / z) < 1e-12);
}

TEST_CASE("softmax rejects fully masked row") {
    Tape<double> tape;
    Tensor<double> x = Tensor<double>::full(1, 3, neg_inf<double>());
    REQUIRE_THROWS_WITH(softmax_rows(tape.constant(x)),
                        Catch::Matchers::ContainsSubstring("empty attention support"));
}

TEST_CASE("softmax rows sum to one and are nonnegative") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        Tape<double> tape;
        Tensor<double> x = random_tensor(rng, 4, 6, 3.0);
        std::vector<char> masked(24, 0);
        for (std::size_t i = 0; i < masked.size(); ++i) masked[i] = rng.uniform() < 0.3 ? 1 : 0;
        for (std::size_t i = 0; i < 4; ++i) masked[i * 6 + (i % 6)] = 0;  // keep support nonempty
        Tensor<double> p = softmax_rows(tape.constant(x), masked).value();
        for (std::size_t i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                REQUIRE(p.at(i, j) >= 0.0);
                if (masked[i * 6 + j]) REQUIRE(p.at(i, j) == 0.0);
                sum += p.at(i, j);
            }
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
        }
    }
}

TEST_CASE("layer norm on constant vector is zero") {
    Tape<double> tape;
    Var<double> x = tape.input(Tensor<double>::full(1, 5, 3.25));
    Var<double> g = tape.constant(Tensor<double>::full(1, 5, 1.0));
    Var<double> b = tape.constant(Tensor<double>::zeros(1, 5));
    Tensor<double> out = layer_norm(x, g, b, 1e-5).value();
    for (double v : out.data) REQUIRE(std::abs(v) < 1e-12);
}

TEST_CASE("layer norm with zero gain returns bias") {
    Rng rng(3);
    Tape<double> tape;
    Var<double> x = tape.input(random_tensor(rng, 2, 4));
    Var<double> g = tape.constant(Tensor<double>::zeros(1, 4));
    Tensor<double> bias = random_tensor(rng, 1, 4);
    Var<double> b = tape.constant(bias);
    Tensor<double> out = layer_norm(x, g, b, 1e-5).value();
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 4; ++j) REQUIRE(out.at(i, j) == bias.at(0, j));
}

TEST_CASE("layer norm matches hand-computed mean/variance formula") {
    Rng rng(5);
    Tensor<double> xv = random_tensor(rng, 1, 6);
    Tensor<double> gv = random_tensor(rng, 1, 6);
    Tensor<double> bv = random_tensor(rng, 1, 6);
    const double eps = 1e-5;
    Tape<double> tape;
    Tensor<double> out =
        layer_norm(tape.constant(xv), tape.constant(gv), tape.constant(bv), eps).value();

    double mean = 0.0;
    for (double v : xv.data) mean += v;
    mean /= 6.0;
    double var = 0.0;
    for (double v : xv.data) var += (v - mean) * (v - mean);
    var /= 6.0;
    for (std::size_t j = 0; j < 6; ++j) {
        const double want = (xv.data[j] - mean) / std::sqrt(var + eps) * gv.data[j] + bv.data[j];
        REQUIRE(std::abs(out.data[j] - want) < 1e-10);
    }
}

TEST_CASE("cross entropy of confident prediction approaches zero") {
    Tape<double> tape;
    Tensor<double> logits = Tensor<double>::zeros(1, 4);
    logits.at(0, 2) = 100.0;
    Var<double> loss = cross_entropy(tape.constant(logits), {2}, {0});
    REQUIRE(loss.value().data[0] < 1e-10);
}

TEST_CASE("cross entropy of uniform logits is ln V") {
    Tape<double> tape;
    Tensor<double> logits = Tensor<double>::zeros(3, 4);
    Var<double> loss = cross_entropy(tape.constant(logits), {0, 1, 3}, {0, 0, 0});
    REQUIRE(std::abs(loss.value().data[0] - std::log(4.0)) < 1e-12);
}

TEST_CASE("cross entropy matches direct log-softmax oracle") {
    Rng rng(17);
    Tensor<double> logits = random_tensor(rng, 2, 3, 2.0);
    const std::vector<std::int32_t> targets = {2, 0};
    Tape<double> tape;
    const double got =
        cross_entropy(tape.constant(logits), targets, {0, 0}).value().data[0];
    double want = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < 3; ++j) z += std::exp(logits.at(i, j));
        want += -(logits.at(i, targets[i]) - std::log(z));
    }
    want /= 2.0;
    REQUIRE(std::abs(got - want) < 1e-10);
}

TEST_CASE("cross entropy with everything ignored is an error") {
    Tape<double> tape;
    Tensor<double> logits = Tensor<double>::zeros(2, 4);
    REQUIRE_THROWS_AS(cross_entropy(tape.constant(logits), {0, 1}, {1, 1}), NumericError);
}

TEST_CASE("adam leaves parameters with zero gradient unchanged") {
    ParamStore<double> store;
    Rng rng(9);
    Parameter<double>& p = store.add_normal("w", 2, 2, rng, 1.0);
    const Tensor<double> before = p.value;
    AdamState<double> state(store);
    adam_step(store, state, AdamHyper{});
    for (std::size_t i = 0; i < before.data.size(); ++i)
        REQUIRE(p.value.data[i] == before.data[i]);
}

TEST_CASE("adam single-step scalar update matches hand formula") {
    ParamStore<double> store;
    Parameter<double>& p = store.add_full("w", 1, 1, 0.7);
    p.grad.data[0] = 0.3;
    AdamState<double> state(store);
    AdamHyper h;
    h.lr = 0.01;
    h.beta1 = 0.9;
    h.beta2 = 0.98;
    h.eps = 1e-9;
    adam_step(store, state, h);
    const double g = 0.3;
    const double m_hat = ((1 - h.beta1) * g) / (1 - h.beta1);
    const double v_hat = ((1 - h.beta2) * g * g) / (1 - h.beta2);
    const double want = 0.7 - h.lr * m_hat / (std::sqrt(v_hat) + h.eps);
    REQUIRE(std::abs(p.value.data[0] - want) < 1e-12);
    REQUIRE(p.grad.data[0] == 0.0);  // gradients are consumed
}

TEST_CASE("adam keeps twin parameters identical") {
    ParamStore<double> store;
    Parameter<double>& a = store.add_full("a", 2, 1, 0.5);
    Parameter<double>& b = store.add_full("b", 2, 1, 0.5);
    AdamState<double> state(store);
    AdamHyper h;
    for (int step = 0; step < 5; ++step) {
        a.grad.data = {0.1, -0.4};
        b.grad.data = {0.1, -0.4};
        adam_step(store, state, h);
    }
    REQUIRE(a.value.data == b.value.data);
}

TEST_CASE("adam rejects non-finite gradients by name") {
    ParamStore<double> store;
    Parameter<double>& p = store.add_full("enc.bad", 1, 1, 0.0);
    p.grad.data[0] = std::numeric_limits<double>::quiet_NaN();
    AdamState<double> state(store);
    REQUIRE_THROWS_WITH(adam_step(store, state, AdamHyper{}),
                        Catch::Matchers::ContainsSubstring("enc.bad"));
}

TEST_CASE("gradient of sum is one everywhere") {
    Rng rng(23);
    Tape<double> tape;
    Var<double> x = tape.input(random_tensor(rng, 3, 4));
    tape.backward(sum_all(x));
    for (double v : x.grad().data) REQUIRE(v == 1.0);
}

TEST_CASE("matmul gradient agrees with finite differences") {
    Rng rng(29);
    testsup::check_gradients(
        {random_tensor(rng, 3, 3), random_tensor(rng, 3, 3)},
        [](Tape<double>&, std::vector<Var<double>>& v) { return sum_all(matmul(v[0], v[1])); });
}

TEST_CASE("masked softmax entries receive zero gradient") {
    Tape<double> tape;
    Tensor<double> x = Tensor<double>::zeros(1, 4);
    x.data = {0.3, 1.2, -0.5, 2.0};
    Var<double> in = tape.input(x);
    Var<double> p = softmax_rows(in, {0, 1, 0, 1});
    // weight the output so the gradient is nontrivial
    Tensor<double> w = Tensor<double>::zeros(1, 4);
    w.data = {1.0, 2.0, 3.0, 4.0};
    tape.backward(sum_all(mul_const(p, w)));
    REQUIRE(in.grad().at(0, 1) == 0.0);
    REQUIRE(in.grad().at(0, 3) == 0.0);
    REQUIRE(in.grad().at(0, 0) != 0.0);
}

TEST_CASE("backward before forward is an error") {
    Tape<double> tape;
    Var<double> ghost;
    ghost.tape = &tape;
    ghost.id = 5;
    REQUIRE_THROWS_AS(tape.backward(ghost), ConfigError);
}

TEST_CASE("rng stream is reproducible") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}
