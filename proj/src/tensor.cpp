#include "blockdiff/tensor.hpp"

#include <cmath>
#include <sstream>

namespace blockdiff {

Tensor Tensor::zeros(std::vector<int64_t> shape) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(static_cast<size_t>(t.numel()), 0.0);
    return t;
}

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
    Tensor t;
    t.shape = std::move(shape);
    t.data.assign(static_cast<size_t>(t.numel()), v);
    return t;
}

Tensor Tensor::from_rows(int64_t rows, int64_t cols, std::vector<double> values) {
    if (static_cast<int64_t>(values.size()) != rows * cols)
        throw DimError("Tensor::from_rows: value count does not match rows*cols");
    Tensor t;
    t.shape = {rows, cols};
    t.data = std::move(values);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor randn(std::vector<int64_t> shape, double scale, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = scale * rng.next_gaussian();
    return t;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw DimError("kl_divergence: row size mismatch");
    double sp = 0.0, sq = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0) throw DomainError("kl_divergence: negative entry");
        sp += p[i];
        sq += q[i];
    }
    if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9)
        throw DomainError("kl_divergence: rows must sum to 1 within 1e-9");
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        kl += p[i] * std::log(p[i] / std::max(q[i], kEpsKl));
    }
    // clamping q below can push the sum infinitesimally negative
    return std::max(kl, 0.0);
}

}  // namespace blockdiff
