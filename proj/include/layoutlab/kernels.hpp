#pragma once

#include <cstdint>

namespace layoutlab::kernels {

// Dense kernels behind the graph ops. Each has an OpenMP variant that
// splits work over output rows and a serial reference. The parallel
// variants are bit-identical to the serial ones because every output
// element is reduced by a single thread in the same order; tests assert
// this and the bench_kernels tool measures the speedup.
//
// `accumulate` adds into c instead of overwriting it.

// c[m,n] = a[m,k] * b[k,n]
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate = false);
void matmul_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                   bool accumulate = false);

// c[m,n] = a[m,k] * b[n,k]^T
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate = false);
void matmul_nt_serial(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
                      bool accumulate = false);

// c[m,n] = a[k,m]^T * b[k,n]
void matmul_tn(const double* a, const double* b, double* c, int64_t k, int64_t m, int64_t n,
               bool accumulate = false);
void matmul_tn_serial(const double* a, const double* b, double* c, int64_t k, int64_t m, int64_t n,
                      bool accumulate = false);

// Row-wise softmax with max subtraction.
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);
void softmax_rows_serial(const double* x, double* y, int64_t rows, int64_t cols);

// Row-wise layer normalization: y = gain * (x - mean) / sqrt(var + eps) + bias.
void layer_norm_rows(const double* x, const double* gain, const double* bias, double* y,
                     int64_t rows, int64_t cols, double eps);
void layer_norm_rows_serial(const double* x, const double* gain, const double* bias, double* y,
                            int64_t rows, int64_t cols, double eps);

// Exact GELU, x * Phi(x).
void gelu(const double* x, double* y, int64_t n);
void gelu_serial(const double* x, double* y, int64_t n);

}  // namespace layoutlab::kernels
