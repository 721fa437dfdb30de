#include "blockdiff/kernels.hpp"

#include <cmath>
#include <cstring>
#include <limits>

namespace blockdiff::kernels {

void linear(const double* x, int64_t rows, int64_t in, const double* w, const double* b,
            int64_t out, double* y) {
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x + r * in;
        double* yr = y + r * out;
        if (b) {
            std::memcpy(yr, b, static_cast<size_t>(out) * sizeof(double));
        } else {
            std::memset(yr, 0, static_cast<size_t>(out) * sizeof(double));
        }
        for (int64_t k = 0; k < in; ++k) {
            const double xv = xr[k];
            const double* wk = w + k * out;
            for (int64_t n = 0; n < out; ++n) yr[n] += xv * wk[n];
        }
    }
}

void layer_norm_row(const double* x, int64_t n, const double* gain, const double* bias,
                    double* y, double* save_mean, double* save_rstd) {
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = x[i] - mean;
        var += d * d;
    }
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    for (int64_t i = 0; i < n; ++i) y[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
    if (save_mean) *save_mean = mean;
    if (save_rstd) *save_rstd = rstd;
}

void softmax_masked_row(const double* scores, const uint8_t* allow, int64_t n, double* probs) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < n; ++j) {
        if (allow && !allow[j]) continue;
        if (scores[j] > mx) mx = scores[j];
    }
    double sum = 0.0;
    for (int64_t j = 0; j < n; ++j) {
        if (allow && !allow[j]) {
            probs[j] = 0.0;
            continue;
        }
        probs[j] = std::exp(scores[j] - mx);
        sum += probs[j];
    }
    for (int64_t j = 0; j < n; ++j) {
        if (allow && !allow[j]) continue;
        probs[j] /= sum;
    }
}

void log_softmax_row(const double* x, int64_t n, double* y) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < n; ++j)
        if (x[j] > mx) mx = x[j];
    double sum = 0.0;
    for (int64_t j = 0; j < n; ++j) sum += std::exp(x[j] - mx);
    const double lse = mx + std::log(sum);
    for (int64_t j = 0; j < n; ++j) y[j] = x[j] - lse;
}

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440));
}

double gelu_grad(double x) {
    const double phi_cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
    const double phi_pdf = 0.39894228040143267794 * std::exp(-0.5 * x * x);
    return phi_cdf + x * phi_pdf;
}

double dot(const double* a, const double* b, int64_t n) {
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(double alpha, const double* x, int64_t n, double* y) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace blockdiff::kernels
