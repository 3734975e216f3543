#include "layoutlab/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace layoutlab::kernels {

namespace {

inline void matmul_row(const double* a, const double* b, double* c_row, int64_t i, int64_t k,
                       int64_t n, bool accumulate) {
    if (!accumulate) std::fill(c_row, c_row + n, 0.0);
    const double* a_row = a + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
        const double aik = a_row[kk];
        const double* b_row = b + kk * n;
        for (int64_t j = 0; j < n; ++j) c_row[j] += aik * b_row[j];
    }
}

inline void matmul_nt_row(const double* a, const double* b, double* c_row, int64_t i, int64_t k,
                          int64_t n, bool accumulate) {
    const double* a_row = a + i * k;
    for (int64_t j = 0; j < n; ++j) {
        const double* b_row = b + j * k;
        double acc = 0.0;
        for (int64_t kk = 0; kk < k; ++kk) acc += a_row[kk] * b_row[kk];
        c_row[j] = accumulate ? c_row[j] + acc : acc;
    }
}

inline void matmul_tn_row(const double* a, const double* b, double* c_row, int64_t i, int64_t k,
                          int64_t m, int64_t n, bool accumulate) {
    if (!accumulate) std::fill(c_row, c_row + n, 0.0);
    for (int64_t kk = 0; kk < k; ++kk) {
        const double aki = a[kk * m + i];
        const double* b_row = b + kk * n;
        for (int64_t j = 0; j < n; ++j) c_row[j] += aki * b_row[j];
    }
}

inline void softmax_row(const double* x_row, double* y_row, int64_t cols) {
    double mx = x_row[0];
    for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, x_row[j]);
    double sum = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
        y_row[j] = std::exp(x_row[j] - mx);
        sum += y_row[j];
    }
    const double inv = 1.0 / sum;
    for (int64_t j = 0; j < cols; ++j) y_row[j] *= inv;
}

inline void layer_norm_row(const double* x_row, const double* gain, const double* bias,
                           double* y_row, int64_t cols, double eps) {
    double mean = 0.0;
    for (int64_t j = 0; j < cols; ++j) mean += x_row[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
        const double d = x_row[j] - mean;
        var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < cols; ++j) y_row[j] = gain[j] * ((x_row[j] - mean) * inv) + bias[j];
}

inline double gelu_one(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)); }

}  // namespace

void matmul_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                   bool accumulate) {
    for (int64_t i = 0; i < m; ++i) matmul_row(a, b, c + i * n, i, k, n, accumulate);
}

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) matmul_row(a, b, c + i * n, i, k, n, accumulate);
}

void matmul_nt_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                      bool accumulate) {
    for (int64_t i = 0; i < m; ++i) matmul_nt_row(a, b, c + i * n, i, k, n, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) matmul_nt_row(a, b, c + i * n, i, k, n, accumulate);
}

void matmul_tn_serial(const double* a, const double* b, double* c, int64_t k, int64_t m, int64_t n,
                      bool accumulate) {
    for (int64_t i = 0; i < m; ++i) matmul_tn_row(a, b, c + i * n, i, k, m, n, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, int64_t k, int64_t m, int64_t n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) matmul_tn_row(a, b, c + i * n, i, k, m, n, accumulate);
}

void softmax_rows_serial(const double* x, double* y, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
}

void layer_norm_rows_serial(const double* x, const double* gain, const double* bias, double* y,
                            int64_t rows, int64_t cols, double eps) {
    for (int64_t i = 0; i < rows; ++i) layer_norm_row(x + i * cols, gain, bias, y + i * cols, cols, eps);
}

void layer_norm_rows(const double* x, const double* gain, const double* bias, double* y,
                     int64_t rows, int64_t cols, double eps) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i) layer_norm_row(x + i * cols, gain, bias, y + i * cols, cols, eps);
}

void gelu_serial(const double* x, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}

void gelu(const double* x, double* y, int64_t n) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = gelu_one(x[i]);
}

}  // namespace layoutlab::kernels
