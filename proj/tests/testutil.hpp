#pragma once

// Shared oracles and generators for the test suites. Everything here is
// deliberately independent of the library's computation paths: finite
// differences, direct formula evaluation, and brute-force loops only.

#include <cmath>
#include <functional>
#include <vector>

#include "fedleak/rng.hpp"
#include "fedleak/tensor.hpp"

namespace testutil {

using fedleak::CounterRng;
using fedleak::Tensor;

inline Tensor random_tensor(std::vector<std::size_t> dims, CounterRng& rng, float lo = -1.0f,
                            float hi = 1.0f) {
    Tensor t(std::move(dims));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(lo, hi);
    return t;
}

/// Central finite differences of a scalar function at x, step h per
/// coordinate. Returns the full gradient estimate.
inline Tensor finite_diff(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double h = 1e-3) {
    Tensor g(x.dims());
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor xp = x, xm = x;
        xp[i] = float(double(x[i]) + h);
        xm[i] = float(double(x[i]) - h);
        g[i] = float((f(xp) - f(xm)) / (2.0 * h));
    }
    return g;
}

/// Finite differences on a sampled coordinate subset (for large tensors).
inline void finite_diff_sampled(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                const std::vector<std::size_t>& coords, double h,
                                std::vector<double>& out) {
    out.clear();
    for (std::size_t i : coords) {
        Tensor xp = x, xm = x;
        xp[i] = float(double(x[i]) + h);
        xm[i] = float(double(x[i]) - h);
        out.push_back((f(xp) - f(xm)) / (2.0 * h));
    }
}

/// Relative error between two vectors in the gradient-check sense:
/// ||a - b|| / max(||a||, ||b||, tiny).
inline double vector_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
    double da = 0.0, db = 0.0, dd = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        da += a[i] * a[i];
        db += b[i] * b[i];
        dd += (a[i] - b[i]) * (a[i] - b[i]);
    }
    const double denom = std::max(std::sqrt(da), std::max(std::sqrt(db), 1e-12));
    return std::sqrt(dd) / denom;
}

inline double rel_error(const Tensor& a, const Tensor& b) {
    std::vector<double> va(a.size()), vb(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) va[i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) vb[i] = b[i];
    return vector_rel_error(va, vb);
}

inline std::vector<std::size_t> sample_coords(std::size_t n, std::size_t want, CounterRng& rng) {
    std::vector<std::size_t> coords;
    if (n <= want) {
        for (std::size_t i = 0; i < n; ++i) coords.push_back(i);
        return coords;
    }
    // distinct draws via partial Fisher-Yates over an index array
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < want; ++i) {
        const std::size_t j = i + rng.next_below(n - i);
        std::swap(idx[i], idx[j]);
        coords.push_back(idx[i]);
    }
    return coords;
}

}  // namespace testutil
