#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fedleak/error.hpp"

namespace fedleak {

/// Dense n-dimensional array of 32-bit floats, stored flat in row-major
/// order. Tensors are plain values: copying copies the payload, and nothing
/// in the library mutates a tensor it does not own.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims)
        : dims_(std::move(dims)), data_(checked_size(dims_), 0.0f) {}

    Tensor(std::vector<std::size_t> dims, std::vector<float> data)
        : dims_(std::move(dims)), data_(std::move(data)) {
        if (data_.size() != checked_size(dims_)) {
            throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                             " does not match dims " + shape_to_string(dims_));
        }
    }

    static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims)); }

    static Tensor full(std::vector<std::size_t> dims, float v) {
        Tensor t(std::move(dims));
        for (auto& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(float v) { return Tensor({1}, {v}); }

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

    std::string shape_str() const { return shape_to_string(dims_); }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool bit_equal(const Tensor& o) const { return dims_ == o.dims_ && data_ == o.data_; }

    static std::string shape_to_string(const std::vector<std::size_t>& dims) {
        std::string s = "[";
        for (std::size_t i = 0; i < dims.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims[i]);
        }
        return s + "]";
    }

  private:
    static std::size_t checked_size(const std::vector<std::size_t>& dims) {
        std::size_t n = 1;
        for (std::size_t d : dims) {
            if (d == 0) throw ShapeError("tensor: zero extent in dims " + shape_to_string(dims));
            n *= d;
        }
        return dims.empty() ? 0 : n;
    }

    std::vector<std::size_t> dims_;
    std::vector<float> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

/// Dot product accumulated in double.
inline double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
    return s;
}

inline double squared_norm(const Tensor& a) { return dot(a, a); }

inline double l2_norm(const Tensor& a) { return std::sqrt(squared_norm(a)); }

}  // namespace fedleak
