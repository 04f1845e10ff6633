#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "plab/error.hpp"

namespace plab {

// Dense row-major tensor of 64-bit reals. When requires_grad is set, grad
// holds a same-sized buffer that optimizers and the tape accumulate into.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;

    static Tensor zeros(std::vector<std::int64_t> shape);
    static Tensor full(std::vector<std::int64_t> shape, double value);
    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor from_vec(std::vector<double> values);  // shape {n}
    static Tensor identity(std::int64_t n);

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (const auto d : shape) n *= d;
        return n;
    }
    bool is_scalar() const { return numel() == 1; }

    // 2-D accessors; rank-1 tensors count as a single row.
    std::int64_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
    std::int64_t cols() const {
        return shape.size() >= 2 ? shape[1] : (shape.empty() ? 1 : shape[0]);
    }
    double& at(std::int64_t r, std::int64_t c) { return data[r * cols() + c]; }
    double at(std::int64_t r, std::int64_t c) const { return data[r * cols() + c]; }

    void set_requires_grad(bool on) {
        requires_grad = on;
        if (on) {
            grad.assign(data.size(), 0.0);
        } else {
            grad.clear();
        }
    }
    void zero_grad() {
        if (requires_grad) grad.assign(data.size(), 0.0);
    }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    std::string shape_str() const;

    // Throws NumericError if any entry is NaN/Inf.
    void check_finite(const char* where) const;
};

// Fills with uniform(-bound, bound) draws in row-major order.
class Rng;
Tensor uniform_tensor(std::vector<std::int64_t> shape, double bound, Rng& rng);

}  // namespace plab
