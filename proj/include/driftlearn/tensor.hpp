#pragma once

#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace driftlearn {

using Vec = std::vector<double>;

// Dense row-major matrix. Just enough surface for the model and the engine;
// all hot loops index `data` directly.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline void check_dim(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("dimension mismatch: " + what);
}

// y = W x + b, W is (out x in).
inline Vec affine(const Mat& w, const Vec& b, const Vec& x) {
    check_dim(w.cols == x.size() && w.rows == b.size(), "affine");
    Vec y(w.rows);
    for (std::size_t i = 0; i < w.rows; ++i) {
        const double* wr = w.row(i);
        double acc = b[i];
        for (std::size_t j = 0; j < w.cols; ++j) acc += wr[j] * x[j];
        y[i] = acc;
    }
    return y;
}

inline double dot(const Vec& a, const Vec& b) {
    assert(a.size() == b.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double sq_norm(const Vec& a) { return dot(a, a); }

inline double sq_dist(const Vec& a, const Vec& b) {
    assert(a.size() == b.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double relu_grad(double pre) { return pre > 0.0 ? 1.0 : 0.0; }

inline double sigmoid(double x) {
    if (x >= 0.0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// 1-D convolution along time with 'same' zero padding, single in/out pair.
// out[t] = sum_k w[k] * in[t + k - pad], pad = (kernel-1)/2.
// The model's multi-channel convolutions reduce to sums of these.
inline Vec conv1d_same(const Vec& in, const Vec& kernel) {
    const std::size_t n = in.size();
    const std::size_t ks = kernel.size();
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((ks - 1) / 2);
    Vec out(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        double acc = 0.0;
        for (std::size_t k = 0; k < ks; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - pad;
            if (src >= 0 && src < static_cast<std::ptrdiff_t>(n)) {
                acc += kernel[k] * in[static_cast<std::size_t>(src)];
            }
        }
        out[t] = acc;
    }
    return out;
}

inline double mean(const Vec& v) {
    if (v.empty()) return 0.0;
    double acc = 0.0;
    for (double x : v) acc += x;
    return acc / static_cast<double>(v.size());
}

// Population variance (divide by n).
inline double variance_pop(const Vec& v) {
    if (v.empty()) return 0.0;
    const double m = mean(v);
    double acc = 0.0;
    for (double x : v) {
        const double d = x - m;
        acc += d * d;
    }
    return acc / static_cast<double>(v.size());
}

}  // namespace driftlearn
