#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "natlab/errors.hpp"
#include "natlab/param.hpp"
#include "natlab/rng.hpp"
#include "natlab/tensor.hpp"

namespace natlab {

template <typename T>
class Tape;

// Handle into a tape node. Cheap to copy; valid as long as the tape lives.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const { return tape->node(id).value; }
    const Tensor<T>& grad() const { return tape->node(id).grad; }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

// Reverse-mode tape. Ops append nodes with a backward closure; backward()
// walks the nodes in reverse creation order, then flushes gradients of
// bound parameters into their Parameter::grad accumulators.
template <typename T>
class Tape {
public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void(Tape&)> backprop;  // empty for leaves/constants
        bool needs_grad = false;
    };

    // When set, every op verifies its output is finite (mask sentinels
    // excepted). Used by tests; off by default for training speed.
    bool check_finite = false;

    Var<T> constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

    Var<T> input(Tensor<T> v, bool needs_grad = true) {
        return push(std::move(v), needs_grad, nullptr);
    }

    Var<T> leaf(Parameter<T>& p) {
        Var<T> v = push(p.value, true, nullptr);
        bound_params_.push_back({v.id, &p});
        return v;
    }

    Node& node(std::size_t id) { return nodes_[id]; }
    std::size_t size() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and propagates. loss must be scalar.
    void backward(Var<T> loss) {
        if (nodes_.empty() || loss.tape != this || loss.id >= nodes_.size())
            throw ConfigError("backward before forward: no recorded graph for this variable");
        if (nodes_[loss.id].value.numel() != 1)
            throw ShapeError("backward: loss must be scalar, got " +
                             nodes_[loss.id].value.shape_str());
        nodes_[loss.id].grad.data[0] += T(1);
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            if (nodes_[i].backprop && nodes_[i].needs_grad) nodes_[i].backprop(*this);
        }
        for (auto& [id, param] : bound_params_) {
            const Tensor<T>& g = nodes_[id].grad;
            for (std::size_t k = 0; k < g.data.size(); ++k) param->grad.data[k] += g.data[k];
        }
        bound_params_.clear();
    }

    Var<T> push(Tensor<T> value, bool needs_grad, std::function<void(Tape&)> back) {
        Node n;
        n.grad = Tensor<T>(value.shape);
        n.value = std::move(value);
        n.backprop = std::move(back);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return Var<T>{this, nodes_.size() - 1};
    }

    void assert_finite(std::size_t id, const char* op) {
        if (!check_finite) return;
        if (!nodes_[id].value.all_finite())
            throw NumericError(std::string(op) + ": non-finite value produced");
    }

private:
    std::vector<Node> nodes_;
    std::vector<std::pair<std::size_t, Parameter<T>*>> bound_params_;
};

namespace detail {

template <typename T>
Tape<T>& same_tape(Var<T> a, Var<T> b) {
    if (a.tape != b.tape) throw ConfigError("operands recorded on different tapes");
    return *a.tape;
}

}  // namespace detail

// ---- elementwise and structural ops ----

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    Tape<T>& tp = detail::same_tape(a, b);
    const Tensor<T>&av = a.value(), &bv = b.value();
    if (!av.same_shape(bv))
        throw ShapeError("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    Tensor<T> out(av.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av.data[i] + bv.data[i];
    bool ng = tp.node(a.id).needs_grad || tp.node(b.id).needs_grad;
    Var<T> r = tp.push(std::move(out), ng, nullptr);
    tp.assert_finite(r.id, "add");
    tp.node(r.id).backprop = [a, b, r](Tape<T>& t) {
        const Tensor<T>& g = t.node(r.id).grad;
        if (t.node(a.id).needs_grad) {
            Tensor<T>& ga = t.node(a.id).grad;
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        }
        if (t.node(b.id).needs_grad) {
            Tensor<T>& gb = t.node(b.id).grad;
            for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] += g.data[i];
        }
    };
    return r;
}

// a[m x n] + row vector b[1 x n] broadcast over rows.
template <typename T>
Var<T> add_rowvec(Var<T> a, Var<T> b) {
    Tape<T>& tp = detail::same_tape(a, b);
    const Tensor<T>&av = a.value(), &bv = b.value();
    if (bv.rows() != 1 || bv.cols() != av.cols())
        throw ShapeError("add_rowvec: expected [1x" + std::to_string(av.cols()) + "], got " +
                         bv.shape_str());
    Tensor<T> out(av.shape);
    for (std::size_t i = 0; i < av.rows(); ++i)
        for (std::size_t j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j) + bv.at(0, j);
    bool ng = tp.node(a.id).needs_grad || tp.node(b.id).needs_grad;
    Var<T> r = tp.push(std::move(out), ng, nullptr);
    tp.assert_finite(r.id, "add_rowvec");
    tp.node(r.id).backprop = [a, b, r](Tape<T>& t) {
        const Tensor<T>& g = t.node(r.id).grad;
        if (t.node(a.id).needs_grad) {
            Tensor<T>& ga = t.node(a.id).grad;
            for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
        }
        if (t.node(b.id).needs_grad) {
            Tensor<T>& gb = t.node(b.id).grad;
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) gb.at(0, j) += g.at(i, j);
        }
    };
    return r;
}

// alpha * x + beta, scalars.
template <typename T>
Var<T> affine(Var<T> x, T alpha, T beta) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = alpha * xv.data[i] + beta;
    Var<T> r = tp.push(std::move(out), tp.node(x.id).needs_grad, nullptr);
    tp.assert_finite(r.id, "affine");
    tp.node(r.id).backprop = [x, r, alpha](Tape<T>& t) {
        if (!t.node(x.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        Tensor<T>& gx = t.node(x.id).grad;
        for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += alpha * g.data[i];
    };
    return r;
}

template <typename T>
Var<T> scale(Var<T> x, T alpha) {
    return affine(x, alpha, T(0));
}

template <typename T>
Var<T> one_minus(Var<T> x) {
    return affine(x, T(-1), T(1));
}

// Elementwise multiply by a fixed tensor (dropout masks etc.).
template <typename T>
Var<T> mul_const(Var<T> x, Tensor<T> m) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    if (!xv.same_shape(m))
        throw ShapeError("mul_const: shape mismatch " + xv.shape_str() + " vs " + m.shape_str());
    Tensor<T> out(xv.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = xv.data[i] * m.data[i];
    Var<T> r = tp.push(std::move(out), tp.node(x.id).needs_grad, nullptr);
    tp.assert_finite(r.id, "mul_const");
    tp.node(r.id).backprop = [x, r, m = std::move(m)](Tape<T>& t) {
        if (!t.node(x.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        Tensor<T>& gx = t.node(x.id).grad;
        for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i] * m.data[i];
    };
    return r;
}

template <typename T>
Var<T> add_const(Var<T> x, Tensor<T> c) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    if (!xv.same_shape(c))
        throw ShapeError("add_const: shape mismatch " + xv.shape_str() + " vs " + c.shape_str());
    Tensor<T> out(xv.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = xv.data[i] + c.data[i];
    Var<T> r = tp.push(std::move(out), tp.node(x.id).needs_grad, nullptr);
    tp.assert_finite(r.id, "add_const");
    tp.node(r.id).backprop = [x, r](Tape<T>& t) {
        if (!t.node(x.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        Tensor<T>& gx = t.node(x.id).grad;
        for (std::size_t i = 0; i < g.data.size(); ++i) gx.data[i] += g.data[i];
    };
    return r;
}

template <typename T>
Var<T> relu(Var<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::max(xv.data[i], T(0));
    Var<T> r = tp.push(std::move(out), tp.node(x.id).needs_grad, nullptr);
    tp.node(r.id).backprop = [x, r](Tape<T>& t) {
        if (!t.node(x.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        const Tensor<T>& xv = t.node(x.id).value;
        Tensor<T>& gx = t.node(x.id).grad;
        for (std::size_t i = 0; i < g.data.size(); ++i)
            if (xv.data[i] > T(0)) gx.data[i] += g.data[i];
    };
    return r;
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const T v = xv.data[i];
        out.data[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                : std::exp(v) / (T(1) + std::exp(v));
    }
    Var<T> r = tp.push(std::move(out), tp.node(x.id).needs_grad, nullptr);
    tp.assert_finite(r.id, "sigmoid");
    tp.node(r.id).backprop = [x, r](Tape<T>& t) {
        if (!t.node(x.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        const Tensor<T>& s = t.node(r.id).value;
        Tensor<T>& gx = t.node(x.id).grad;
        for (std::size_t i = 0; i < g.data.size(); ++i)
            gx.data[i] += g.data[i] * s.data[i] * (T(1) - s.data[i]);
    };
    return r;
}

// ---- matrix products ----

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    Tape<T>& tp = detail::same_tape(a, b);
    Tensor<T> out;
    matmul_into(a.value(), b.value(), out, false);
    bool ng = tp.node(a.id).needs_grad || tp.node(b.id).needs_grad;
    Var<T> r = tp.push(std::move(out), ng, nullptr);
    tp.assert_finite(r.id, "matmul");
    tp.node(r.id).backprop = [a, b, r](Tape<T>& t) {
        const Tensor<T>& g = t.node(r.id).grad;
        if (t.node(a.id).needs_grad) matmul_nt_into(g, t.node(b.id).value, t.node(a.id).grad, true);
        if (t.node(b.id).needs_grad) matmul_tn_into(t.node(a.id).value, g, t.node(b.id).grad, true);
    };
    return r;
}

// a x b^T; the natural shape for attention scores Q K^T.
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
    Tape<T>& tp = detail::same_tape(a, b);
    Tensor<T> out;
    matmul_nt_into(a.value(), b.value(), out, false);
    bool ng = tp.node(a.id).needs_grad || tp.node(b.id).needs_grad;
    Var<T> r = tp.push(std::move(out), ng, nullptr);
    tp.assert_finite(r.id, "matmul_nt");
    tp.node(r.id).backprop = [a, b, r](Tape<T>& t) {
        const Tensor<T>& g = t.node(r.id).grad;
        if (t.node(a.id).needs_grad) matmul_into(g, t.node(b.id).value, t.node(a.id).grad, true);
        if (t.node(b.id).needs_grad) matmul_tn_into(g, t.node(a.id).value, t.node(b.id).grad, true);
    };
    return r;
}

// ---- masking and softmax ----

// Sets columns with mask[j] true to -inf. Masked entries get zero gradient.
template <typename T>
Var<T> mask_cols(Var<T> x, std::vector<char> col_masked) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    if (col_masked.size() != xv.cols())
        throw ShapeError("mask_cols: mask length " + std::to_string(col_masked.size()) +
                         " vs cols " + std::to_string(xv.cols()));
    Tensor<T> out = xv;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j)
            if (col_masked[j]) out.at(i, j) = neg_inf<T>();
    Var<T> r = tp.push(std::move(out), tp.node(x.id).needs_grad, nullptr);
    tp.node(r.id).backprop = [x, r, col_masked = std::move(col_masked)](Tape<T>& t) {
        if (!t.node(x.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        Tensor<T>& gx = t.node(x.id).grad;
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j)
                if (!col_masked[j]) gx.at(i, j) += g.at(i, j);
    };
    return r;
}

// Elementwise boolean mask (true = excluded from attention support).
template <typename T>
Var<T> mask_elems(Var<T> x, std::vector<char> masked) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    if (masked.size() != xv.numel())
        throw ShapeError("mask_elems: mask numel " + std::to_string(masked.size()) + " vs " +
                         xv.shape_str());
    Tensor<T> out = xv;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        if (masked[i]) out.data[i] = neg_inf<T>();
    Var<T> r = tp.push(std::move(out), tp.node(x.id).needs_grad, nullptr);
    tp.node(r.id).backprop = [x, r, masked = std::move(masked)](Tape<T>& t) {
        if (!t.node(x.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        Tensor<T>& gx = t.node(x.id).grad;
        for (std::size_t i = 0; i < g.data.size(); ++i)
            if (!masked[i]) gx.data[i] += g.data[i];
    };
    return r;
}

// Upper-triangle mask for autoregressive self-attention (j > i -> -inf).
template <typename T>
Var<T> mask_causal(Var<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    Tensor<T> out = xv;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = i + 1; j < out.cols(); ++j) out.at(i, j) = neg_inf<T>();
    Var<T> r = tp.push(std::move(out), tp.node(x.id).needs_grad, nullptr);
    tp.node(r.id).backprop = [x, r](Tape<T>& t) {
        if (!t.node(x.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        Tensor<T>& gx = t.node(x.id).grad;
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j <= i && j < g.cols(); ++j) gx.at(i, j) += g.at(i, j);
    };
    return r;
}

// Row softmax. -inf sentinels come out as exact zeros and receive zero
// gradient; a row with no finite entry raises "empty attention support".
template <typename T>
Var<T> softmax_rows(Var<T> x) {
    Tape<T>& tp = *x.tape;
    Tensor<T> out = x.value();
    softmax_rows_inplace(out);
    Var<T> r = tp.push(std::move(out), tp.node(x.id).needs_grad, nullptr);
    tp.assert_finite(r.id, "softmax_rows");
    tp.node(r.id).backprop = [x, r](Tape<T>& t) {
        if (!t.node(x.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        const Tensor<T>& p = t.node(r.id).value;
        Tensor<T>& gx = t.node(x.id).grad;
        const std::size_t m = g.rows(), n = g.cols();
        for (std::size_t i = 0; i < m; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * p.at(i, j);
            for (std::size_t j = 0; j < n; ++j)
                gx.at(i, j) += p.at(i, j) * (g.at(i, j) - dot);
        }
    };
    return r;
}

// Masked-softmax convenience matching the two-argument contract: entries
// with mask true are forced to exact zero in the output.
template <typename T>
Var<T> softmax_rows(Var<T> x, const std::vector<char>& masked) {
    return softmax_rows(mask_elems(x, masked));
}

// ---- layer norm ----

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    const std::size_t d = xv.cols();
    if (gain.value().numel() != d || bias.value().numel() != d)
        throw ShapeError("layer_norm: gain/bias length must equal last dim " + std::to_string(d) +
                         ", got " + gain.value().shape_str() + " / " + bias.value().shape_str());
    Tensor<T> out(xv.shape);
    Tensor<T> xhat(xv.shape);
    std::vector<T> inv_std(xv.rows());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        T mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += xv.at(i, j);
        mean /= static_cast<T>(d);
        T var = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const T c = xv.at(i, j) - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        inv_std[i] = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat.at(i, j) = (xv.at(i, j) - mean) * inv_std[i];
            out.at(i, j) = xhat.at(i, j) * gain.value().data[j] + bias.value().data[j];
        }
    }
    bool ng = tp.node(x.id).needs_grad || tp.node(gain.id).needs_grad ||
              tp.node(bias.id).needs_grad;
    Var<T> r = tp.push(std::move(out), ng, nullptr);
    tp.assert_finite(r.id, "layer_norm");
    tp.node(r.id).backprop = [x, gain, bias, r, xhat = std::move(xhat),
                              inv_std = std::move(inv_std)](Tape<T>& t) {
        const Tensor<T>& g = t.node(r.id).grad;
        const std::size_t m = g.rows(), d = g.cols();
        const Tensor<T>& gv = t.node(gain.id).value;
        for (std::size_t i = 0; i < m; ++i) {
            if (t.node(gain.id).needs_grad) {
                Tensor<T>& gg = t.node(gain.id).grad;
                for (std::size_t j = 0; j < d; ++j) gg.data[j] += g.at(i, j) * xhat.at(i, j);
            }
            if (t.node(bias.id).needs_grad) {
                Tensor<T>& gb = t.node(bias.id).grad;
                for (std::size_t j = 0; j < d; ++j) gb.data[j] += g.at(i, j);
            }
            if (t.node(x.id).needs_grad) {
                T mean_dxhat = 0, mean_dxhat_xhat = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    const T dxh = g.at(i, j) * gv.data[j];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xhat.at(i, j);
                }
                mean_dxhat /= static_cast<T>(d);
                mean_dxhat_xhat /= static_cast<T>(d);
                Tensor<T>& gx = t.node(x.id).grad;
                for (std::size_t j = 0; j < d; ++j) {
                    const T dxh = g.at(i, j) * gv.data[j];
                    gx.at(i, j) += inv_std[i] * (dxh - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat);
                }
            }
        }
    };
    return r;
}

// ---- gathers, slices, pools ----

template <typename T>
Var<T> embedding(Var<T> table, std::vector<std::int32_t> ids) {
    Tape<T>& tp = *table.tape;
    const Tensor<T>& tv = table.value();
    const std::size_t d = tv.cols();
    Tensor<T> out = Tensor<T>::zeros(ids.size(), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows())
            throw DataError("embedding: token id " + std::to_string(ids[i]) +
                            " outside vocabulary of size " + std::to_string(tv.rows()));
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = tv.at(ids[i], j);
    }
    Var<T> r = tp.push(std::move(out), tp.node(table.id).needs_grad, nullptr);
    tp.node(r.id).backprop = [table, r, ids = std::move(ids)](Tape<T>& t) {
        if (!t.node(table.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        Tensor<T>& gt = t.node(table.id).grad;
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) gt.at(ids[i], j) += g.at(i, j);
    };
    return r;
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t len) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    if (start + len > xv.cols())
        throw ShapeError("slice_cols: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " + xv.shape_str());
    Tensor<T> out = Tensor<T>::zeros(xv.rows(), len);
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < len; ++j) out.at(i, j) = xv.at(i, start + j);
    Var<T> r = tp.push(std::move(out), tp.node(x.id).needs_grad, nullptr);
    tp.node(r.id).backprop = [x, r, start, len](Tape<T>& t) {
        if (!t.node(x.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        Tensor<T>& gx = t.node(x.id).grad;
        for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < len; ++j) gx.at(i, start + j) += g.at(i, j);
    };
    return r;
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    Tape<T>& tp = *parts[0].tape;
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    bool ng = false;
    for (const Var<T>& p : parts) {
        if (p.rows() != m)
            throw ShapeError("concat_cols: row mismatch " + p.value().shape_str());
        total += p.cols();
        ng = ng || tp.node(p.id).needs_grad;
    }
    Tensor<T> out = Tensor<T>::zeros(m, total);
    std::size_t off = 0;
    for (const Var<T>& p : parts) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.value().at(i, j);
        off += p.cols();
    }
    Var<T> r = tp.push(std::move(out), ng, nullptr);
    tp.node(r.id).backprop = [parts, r](Tape<T>& t) {
        const Tensor<T>& g = t.node(r.id).grad;
        std::size_t off = 0;
        for (const Var<T>& p : parts) {
            const std::size_t w = t.node(p.id).value.cols();
            if (t.node(p.id).needs_grad) {
                Tensor<T>& gp = t.node(p.id).grad;
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < w; ++j) gp.at(i, j) += g.at(i, off + j);
            }
            off += w;
        }
    };
    return r;
}

// Row i of x scaled by s[i]; s is [m x 1].
template <typename T>
Var<T> scale_rows(Var<T> x, Var<T> s) {
    Tape<T>& tp = detail::same_tape(x, s);
    const Tensor<T>&xv = x.value(), &sv = s.value();
    if (sv.rows() != xv.rows() || sv.cols() != 1)
        throw ShapeError("scale_rows: scale must be [" + std::to_string(xv.rows()) + "x1], got " +
                         sv.shape_str());
    Tensor<T> out(xv.shape);
    for (std::size_t i = 0; i < xv.rows(); ++i)
        for (std::size_t j = 0; j < xv.cols(); ++j) out.at(i, j) = xv.at(i, j) * sv.at(i, 0);
    bool ng = tp.node(x.id).needs_grad || tp.node(s.id).needs_grad;
    Var<T> r = tp.push(std::move(out), ng, nullptr);
    tp.assert_finite(r.id, "scale_rows");
    tp.node(r.id).backprop = [x, s, r](Tape<T>& t) {
        const Tensor<T>& g = t.node(r.id).grad;
        const Tensor<T>& xv = t.node(x.id).value;
        const Tensor<T>& sv = t.node(s.id).value;
        for (std::size_t i = 0; i < g.rows(); ++i) {
            if (t.node(x.id).needs_grad) {
                Tensor<T>& gx = t.node(x.id).grad;
                for (std::size_t j = 0; j < g.cols(); ++j)
                    gx.at(i, j) += g.at(i, j) * sv.at(i, 0);
            }
            if (t.node(s.id).needs_grad) {
                Tensor<T>& gs = t.node(s.id).grad;
                T acc = 0;
                for (std::size_t j = 0; j < g.cols(); ++j) acc += g.at(i, j) * xv.at(i, j);
                gs.at(i, 0) += acc;
            }
        }
    };
    return r;
}

// Mean over rows with use_row[i] true -> [1 x d].
template <typename T>
Var<T> mean_rows_masked(Var<T> x, std::vector<char> use_row) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    if (use_row.size() != xv.rows())
        throw ShapeError("mean_rows_masked: mask rows " + std::to_string(use_row.size()) + " vs " +
                         xv.shape_str());
    std::size_t count = 0;
    for (char c : use_row) count += c ? 1 : 0;
    if (count == 0) throw NumericError("mean_rows_masked: no rows selected");
    Tensor<T> out = Tensor<T>::zeros(1, xv.cols());
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        if (!use_row[i]) continue;
        for (std::size_t j = 0; j < xv.cols(); ++j) out.at(0, j) += xv.at(i, j);
    }
    for (std::size_t j = 0; j < xv.cols(); ++j) out.at(0, j) /= static_cast<T>(count);
    Var<T> r = tp.push(std::move(out), tp.node(x.id).needs_grad, nullptr);
    tp.node(r.id).backprop = [x, r, use_row = std::move(use_row), count](Tape<T>& t) {
        if (!t.node(x.id).needs_grad) return;
        const Tensor<T>& g = t.node(r.id).grad;
        Tensor<T>& gx = t.node(x.id).grad;
        for (std::size_t i = 0; i < gx.rows(); ++i) {
            if (!use_row[i]) continue;
            for (std::size_t j = 0; j < gx.cols(); ++j)
                gx.at(i, j) += g.at(0, j) / static_cast<T>(count);
        }
    };
    return r;
}

template <typename T>
Var<T> sum_all(Var<T> x) {
    Tape<T>& tp = *x.tape;
    const Tensor<T>& xv = x.value();
    T s = 0;
    for (const T& v : xv.data) s += v;
    Tensor<T> out = Tensor<T>::full(1, 1, s);
    Var<T> r = tp.push(std::move(out), tp.node(x.id).needs_grad, nullptr);
    tp.node(r.id).backprop = [x, r](Tape<T>& t) {
        if (!t.node(x.id).needs_grad) return;
        const T g = t.node(r.id).grad.data[0];
        Tensor<T>& gx = t.node(x.id).grad;
        for (T& v : gx.data) v += g;
    };
    return r;
}

// ---- losses ----

// Sum of -log softmax(logits)[i, target[i]] over rows with use[i] true.
// Stable log-sum-exp; backward is softmax - onehot on the used rows.
template <typename T>
Var<T> nll_masked_sum(Var<T> logits, std::vector<std::int32_t> targets, std::vector<char> use) {
    Tape<T>& tp = *logits.tape;
    const Tensor<T>& lv = logits.value();
    const std::size_t m = lv.rows(), v = lv.cols();
    if (targets.size() != m || use.size() != m)
        throw ShapeError("nll_masked_sum: targets/mask length " + std::to_string(targets.size()) +
                         "/" + std::to_string(use.size()) + " vs rows " + std::to_string(m));
    Tensor<T> probs(lv.shape);
    T total = 0;
    for (std::size_t i = 0; i < m; ++i) {
        if (!use[i]) continue;
        if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= v)
            throw DataError("nll_masked_sum: target id " + std::to_string(targets[i]) +
                            " outside [0," + std::to_string(v) + ")");
        T mx = lv.at(i, 0);
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, lv.at(i, j));
        T sum = 0;
        for (std::size_t j = 0; j < v; ++j) {
            probs.at(i, j) = std::exp(lv.at(i, j) - mx);
            sum += probs.at(i, j);
        }
        for (std::size_t j = 0; j < v; ++j) probs.at(i, j) /= sum;
        total += -(lv.at(i, targets[i]) - mx - std::log(sum));
    }
    Var<T> r = tp.push(Tensor<T>::full(1, 1, total), tp.node(logits.id).needs_grad, nullptr);
    tp.assert_finite(r.id, "nll_masked_sum");
    tp.node(r.id).backprop = [logits, r, probs = std::move(probs), targets = std::move(targets),
                              use = std::move(use)](Tape<T>& t) {
        if (!t.node(logits.id).needs_grad) return;
        const T g = t.node(r.id).grad.data[0];
        Tensor<T>& gl = t.node(logits.id).grad;
        for (std::size_t i = 0; i < gl.rows(); ++i) {
            if (!use[i]) continue;
            for (std::size_t j = 0; j < gl.cols(); ++j) gl.at(i, j) += g * probs.at(i, j);
            gl.at(i, targets[i]) -= g;
        }
    };
    return r;
}

// Mean negative log-likelihood over non-ignored positions (natural log).
template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<std::int32_t>& targets,
                     const std::vector<char>& ignore) {
    std::size_t count = 0;
    std::vector<char> use(ignore.size());
    for (std::size_t i = 0; i < ignore.size(); ++i) {
        use[i] = ignore[i] ? 0 : 1;
        count += use[i];
    }
    if (count == 0) throw NumericError("cross_entropy: all positions ignored");
    return scale(nll_masked_sum(logits, targets, use), T(1) / static_cast<T>(count));
}

// Inverted dropout; draws numel() uniforms from rng even when an entry is
// kept, so the stream advance is input-independent.
template <typename T>
Var<T> dropout(Var<T> x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw ConfigError("dropout rate must be < 1");
    const Tensor<T>& xv = x.value();
    Tensor<T> mask(xv.shape);
    const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < mask.data.size(); ++i)
        mask.data[i] = rng.uniform() < p ? T(0) : keep_scale;
    return mul_const(x, std::move(mask));
}

}  // namespace natlab
