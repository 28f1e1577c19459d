#pragma once

// Dense row-major matrix kernels for the fixed residual-MLP architecture.
// Parameters and activations are stored in 32-bit floats; every reduction
// (dot products, gradient sums, losses) accumulates in 64-bit. The kernels
// are templated on the storage scalar so gradient checks can run a full
// double-precision replay through the identical code path.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "eventflow/common.hpp"

namespace evf {

template <class T>
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> v;  // row-major, v.size() == rows*cols

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, T(0)) {}
    Mat(std::size_t r, std::size_t c, std::vector<T> data)
        : rows(r), cols(c), v(std::move(data)) {
        if (v.size() != rows * cols) throw ShapeError("matrix data size mismatch");
    }

    static Mat zeros(std::size_t r, std::size_t c) { return Mat(r, c); }
    static Mat identity(std::size_t n) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i) m.v[i * n + i] = T(1);
        return m;
    }

    T* row(std::size_t i) { return v.data() + i * cols; }
    const T* row(std::size_t i) const { return v.data() + i * cols; }
    T& at(std::size_t i, std::size_t j) { return v[i * cols + j]; }
    T at(std::size_t i, std::size_t j) const { return v[i * cols + j]; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (const T& x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }
};

using MatF = Mat<float>;
using MatD = Mat<double>;

namespace detail {
inline std::string shape_str(std::size_t r, std::size_t c) {
    return "(" + std::to_string(r) + "," + std::to_string(c) + ")";
}
}  // namespace detail

// c = a(m,k) * b(k,n)
template <class T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions differ " +
                         detail::shape_str(a.rows, a.cols) + " x " +
                         detail::shape_str(b.rows, b.cols));
    Mat<T> c(a.rows, b.cols);
    const std::size_t k = a.cols, n = b.cols;
    parallel_for(a.rows, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> acc(n);
        for (std::size_t i = lo; i < hi; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const T* ai = a.row(i);
            for (std::size_t p = 0; p < k; ++p) {
                const double av = static_cast<double>(ai[p]);
                const T* bp = b.row(p);
                for (std::size_t j = 0; j < n; ++j)
                    acc[j] += av * static_cast<double>(bp[j]);
            }
            T* ci = c.row(i);
            for (std::size_t j = 0; j < n; ++j) ci[j] = static_cast<T>(acc[j]);
        }
    });
    return c;
}

// c = a(m,k) * b(n,k)^T  — row-by-row dot products, the hot path of
// linear layers with (out,in)-shaped weights.
template <class T>
Mat<T> matmul_nt(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.cols)
        throw ShapeError("matmul_nt: inner dimensions differ " +
                         detail::shape_str(a.rows, a.cols) + " x " +
                         detail::shape_str(b.cols, b.rows) + "^T");
    Mat<T> c(a.rows, b.rows);
    const std::size_t k = a.cols, n = b.rows;
    parallel_for(a.rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const T* ai = a.row(i);
            T* ci = c.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                const T* bj = b.row(j);
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p)
                    acc += static_cast<double>(ai[p]) * static_cast<double>(bj[p]);
                ci[j] = static_cast<T>(acc);
            }
        }
    });
    return c;
}

// c = a(k,m)^T * b(k,n) — gradient accumulation over a batch axis.
template <class T>
Mat<T> matmul_tn(const Mat<T>& a, const Mat<T>& b) {
    if (a.rows != b.rows)
        throw ShapeError("matmul_tn: batch dimensions differ " +
                         detail::shape_str(a.cols, a.rows) + "^T x " +
                         detail::shape_str(b.rows, b.cols));
    const std::size_t m = a.cols, n = b.cols, k = a.rows;
    Mat<T> c(m, n);
    parallel_for(m, [&](std::size_t lo, std::size_t hi) {
        std::vector<double> acc(n);
        for (std::size_t i = lo; i < hi; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t p = 0; p < k; ++p) {
                const double av = static_cast<double>(a.at(p, i));
                const T* bp = b.row(p);
                for (std::size_t j = 0; j < n; ++j)
                    acc[j] += av * static_cast<double>(bp[j]);
            }
            T* ci = c.row(i);
            for (std::size_t j = 0; j < n; ++j) ci[j] = static_cast<T>(acc[j]);
        }
    });
    return c;
}

template <class T>
inline T sigmoid(T x) {
    return static_cast<T>(1) / (static_cast<T>(1) + std::exp(-x));
}

// silu(x) = x * sigmoid(x)
template <class T>
Mat<T> silu(const Mat<T>& x) {
    Mat<T> y(x.rows, x.cols);
    parallel_for(x.rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo * x.cols, end = hi * x.cols; i < end; ++i) {
            const T s = sigmoid(x.v[i]);
            y.v[i] = x.v[i] * s;
        }
    });
    return y;
}

// d silu / dx = sigma(x) * (1 + x * (1 - sigma(x))), evaluated at the cached
// pre-activation and multiplied elementwise into the incoming gradient.
template <class T>
Mat<T> silu_backward(const Mat<T>& pre, const Mat<T>& gout) {
    if (!pre.same_shape(gout)) throw ShapeError("silu_backward: shape mismatch");
    Mat<T> g(pre.rows, pre.cols);
    parallel_for(pre.rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo * pre.cols, end = hi * pre.cols; i < end; ++i) {
            const T s = sigmoid(pre.v[i]);
            g.v[i] = gout.v[i] * s * (static_cast<T>(1) + pre.v[i] * (static_cast<T>(1) - s));
        }
    });
    return g;
}

// y = x * w^T + b, with w shaped (out, in) and b length out.
template <class T>
Mat<T> linear_forward(const Mat<T>& w, const std::vector<T>& b, const Mat<T>& x) {
    if (x.cols != w.cols)
        throw ShapeError("linear_forward: input width " + std::to_string(x.cols) +
                         " != weight fan-in " + std::to_string(w.cols));
    if (b.size() != w.rows)
        throw ShapeError("linear_forward: bias length " + std::to_string(b.size()) +
                         " != fan-out " + std::to_string(w.rows));
    Mat<T> y = matmul_nt(x, w);
    parallel_for(y.rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            T* yi = y.row(i);
            for (std::size_t j = 0; j < y.cols; ++j) yi[j] += b[j];
        }
    });
    return y;
}

template <class T>
struct LinearGrads {
    Mat<T> gw;
    std::vector<T> gb;
    Mat<T> gx;
};

// Reverse-mode through y = x*w^T + b given dL/dy.
template <class T>
LinearGrads<T> linear_backward(const Mat<T>& w, const Mat<T>& x, const Mat<T>& gy) {
    if (gy.rows != x.rows || gy.cols != w.rows || x.cols != w.cols)
        throw ShapeError("linear_backward: shape mismatch");
    LinearGrads<T> g;
    g.gw = matmul_tn(gy, x);  // (out, in)
    g.gb.assign(w.rows, T(0));
    for (std::size_t j = 0; j < w.rows; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < gy.rows; ++i)
            acc += static_cast<double>(gy.at(i, j));
        g.gb[j] = static_cast<T>(acc);
    }
    g.gx = matmul(gy, w);  // (batch, in)
    return g;
}

// Mean over rows of the squared L2 norm of (pred - target); the gradient
// seed for reverse mode is 2*(pred-target)/rows.
template <class T>
double mse_rowsum_loss(const Mat<T>& pred, const Mat<T>& target, Mat<T>* grad = nullptr) {
    if (!pred.same_shape(target)) throw ShapeError("mse_rowsum_loss: shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const double d = static_cast<double>(pred.v[i]) - static_cast<double>(target.v[i]);
        acc += d * d;
    }
    const double inv_n = pred.rows ? 1.0 / static_cast<double>(pred.rows) : 0.0;
    if (grad) {
        *grad = Mat<T>(pred.rows, pred.cols);
        for (std::size_t i = 0; i < pred.v.size(); ++i) {
            const double d = static_cast<double>(pred.v[i]) - static_cast<double>(target.v[i]);
            grad->v[i] = static_cast<T>(2.0 * d * inv_n);
        }
    }
    return acc * inv_n;
}

}  // namespace evf
