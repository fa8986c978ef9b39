#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "natlab/errors.hpp"

namespace natlab {

// Dense row-major tensor. Almost everything in the model is 2-D
// [rows x cols]; multi-head data is kept as one tensor per head.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;
    Tensor(std::initializer_list<std::size_t> s) : shape(s) { data.assign(numel_of(shape), T(0)); }
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), T(0));
    }

    static Tensor zeros(std::size_t r, std::size_t c) { return Tensor({r, c}); }
    static Tensor full(std::size_t r, std::size_t c, T v) {
        Tensor t({r, c});
        t.data.assign(r * c, v);
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    T& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return s.empty() ? 0 : n;
    }
};

template <typename T>
inline T neg_inf() {
    return -std::numeric_limits<T>::infinity();
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw ShapeError(msg);
}

// C = A x B, [m x k][k x n]. The single matmul kernel behind both the
// autograd op and its backward products.
template <typename T>
void matmul_into(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, bool accumulate) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k)
        throw ShapeError("matmul: inner dimensions differ, lhs " + a.shape_str() + " rhs " +
                         b.shape_str());
    if (!accumulate) {
        c = Tensor<T>::zeros(m, n);
    }
    const T* pa = a.data.data();
    const T* pb = b.data.data();
    T* pc = c.data.data();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = pa[i * k + p];
            if (aip == T(0)) continue;
            const T* brow = pb + p * n;
            T* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// C = A x B^T, [m x k][n x k] -> [m x n].
template <typename T>
void matmul_nt_into(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, bool accumulate) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k)
        throw ShapeError("matmul_nt: inner dimensions differ, lhs " + a.shape_str() + " rhs " +
                         b.shape_str());
    if (!accumulate) {
        c = Tensor<T>::zeros(m, n);
    }
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a.data.data() + i * k;
        T* crow = c.data.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b.data.data() + j * k;
            T s = 0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

// C = A^T x B, [m x k][m x n] -> [k x n]; used by matmul backward.
template <typename T>
void matmul_tn_into(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& c, bool accumulate) {
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != m)
        throw ShapeError("matmul_tn: outer dimensions differ, lhs " + a.shape_str() + " rhs " +
                         b.shape_str());
    if (!accumulate) {
        c = Tensor<T>::zeros(k, n);
    }
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a.data.data() + i * k;
        const T* brow = b.data.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = arow[p];
            if (aip == T(0)) continue;
            T* crow = c.data.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// In-place row softmax with max-subtraction. -inf entries come out as
// exact zeros; a row with no finite entry is an error.
template <typename T>
void softmax_rows_inplace(Tensor<T>& x) {
    const std::size_t m = x.rows(), n = x.cols();
    for (std::size_t i = 0; i < m; ++i) {
        T* row = x.data.data() + i * n;
        T mx = neg_inf<T>();
        for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, row[j]);
        if (!(mx > neg_inf<T>())) throw NumericError("softmax: empty attention support");
        T sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = row[j] == neg_inf<T>() ? T(0) : std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
    }
}

// argmax over finite entries, ties broken by the lowest index.
template <typename T>
std::size_t argmax_finite(const T* row, std::size_t n) {
    std::size_t best = n;
    T best_v = neg_inf<T>();
    for (std::size_t j = 0; j < n; ++j) {
        if (std::isfinite(static_cast<double>(row[j])) && (best == n || row[j] > best_v)) {
            best = j;
            best_v = row[j];
        }
    }
    if (best == n) throw NumericError("argmax: no finite entry");
    return best;
}

}  // namespace natlab
