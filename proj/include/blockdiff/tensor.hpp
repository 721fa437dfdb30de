#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blockdiff/common.hpp"

namespace blockdiff {

// Dense row-major tensor of 64-bit floats. Rank 0 (scalar), 1 and 2 are the
// only shapes the project uses.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;

    static Tensor scalar(double v) {
        Tensor t;
        t.data = {v};
        return t;
    }
    static Tensor zeros(std::vector<int64_t> shape);
    static Tensor full(std::vector<int64_t> shape, double v);
    static Tensor from_rows(int64_t rows, int64_t cols, std::vector<double> values);

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
    int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
    int64_t cols() const {
        if (shape.size() < 2) throw DimError("Tensor::cols on tensor of rank < 2");
        return shape[1];
    }
    bool is_scalar() const { return shape.empty() && data.size() == 1; }

    double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
    double& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
    double at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

    double* row_ptr(int64_t r) { return data.data() + r * cols(); }
    const double* row_ptr(int64_t r) const { return data.data() + r * cols(); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;

    std::string shape_str() const;
};

// Gaussian init, scale * N(0,1) per entry, deterministic in rng state.
Tensor randn(std::vector<int64_t> shape, double scale, Rng& rng);

// KL divergence between two probability rows, sum p*ln(p/q) with 0*ln0 = 0
// and q clamped below by kEpsKl before the log. Throws DomainError on
// negative entries and DimError when the rows do not sum to 1 within 1e-9.
inline constexpr double kEpsKl = 1e-12;
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

}  // namespace blockdiff
