#pragma once

#include <cstdint>

namespace blockdiff::kernels {

// y[rows x out] = x[rows x in] @ W[in x out] + b[out]  (b may be null).
// k-outer accumulation; for a fixed output column the addends arrive in
// ascending k order, which keeps the training and inference paths bitwise
// identical.
void linear(const double* x, int64_t rows, int64_t in, const double* w, const double* b,
            int64_t out, double* y);

// y[n] = normalized(x) * gain + bias over one row; population statistics.
// rstd = 1/sqrt(var + kLnEps). Optionally saves mean/rstd for backward.
inline constexpr double kLnEps = 1e-24;
void layer_norm_row(const double* x, int64_t n, const double* gain, const double* bias,
                    double* y, double* save_mean = nullptr, double* save_rstd = nullptr);

// Softmax over the allowed entries of one row (max-subtracted); disallowed
// entries get probability exactly 0. allow may be null meaning all-allowed.
void softmax_masked_row(const double* scores, const uint8_t* allow, int64_t n, double* probs);

// log softmax over a full row (max-subtracted)
void log_softmax_row(const double* x, int64_t n, double* y);

double gelu(double x);
double gelu_grad(double x);

double dot(const double* a, const double* b, int64_t n);

// y += alpha * x
void axpy(double alpha, const double* x, int64_t n, double* y);

}  // namespace blockdiff::kernels
