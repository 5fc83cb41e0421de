#pragma once

#include <cstdint>

// Dense inner loops shared by the tensor ops. Each kernel exists twice:
// the OpenMP version used in production and a plain serial reference kept
// for equivalence tests and the benchmark. Both accumulate every output
// element in the same (ascending) order, so with contraction disabled the
// two produce bit-identical results.

namespace cyctr::kernels {

// When false the parallel entry points run their serial bodies.
void set_parallel(bool enabled);
bool parallel_enabled();

// C[m x n] = A[m x k] * B[k x n]; accumulate adds into C instead.
void matmul_nn(const double* A, const double* B, double* C,
               int64_t m, int64_t k, int64_t n, bool accumulate = false);
// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt(const double* A, const double* B, double* C,
               int64_t m, int64_t k, int64_t n, bool accumulate = false);
// C[m x n] = A[k x m]^T * B[k x n]
void matmul_tn(const double* A, const double* B, double* C,
               int64_t m, int64_t k, int64_t n, bool accumulate = false);

// x: H x W x Cin, w: kh x kw x Cin x Cout, out: Ho x Wo x Cout.
// Zero padding, bias may be null.
void conv2d_forward(const double* x, const double* w, const double* bias,
                    double* out, int64_t H, int64_t W, int64_t Cin,
                    int64_t kh, int64_t kw, int64_t Cout,
                    int64_t stride, int64_t pad);

namespace serial {
void matmul_nn(const double* A, const double* B, double* C,
               int64_t m, int64_t k, int64_t n, bool accumulate = false);
void matmul_nt(const double* A, const double* B, double* C,
               int64_t m, int64_t k, int64_t n, bool accumulate = false);
void matmul_tn(const double* A, const double* B, double* C,
               int64_t m, int64_t k, int64_t n, bool accumulate = false);
void conv2d_forward(const double* x, const double* w, const double* bias,
                    double* out, int64_t H, int64_t W, int64_t Cin,
                    int64_t kh, int64_t kw, int64_t Cout,
                    int64_t stride, int64_t pad);
}  // namespace serial

inline void conv2d_out_shape(int64_t H, int64_t W, int64_t kh, int64_t kw,
                             int64_t stride, int64_t pad, int64_t* Ho, int64_t* Wo) {
  *Ho = (H + 2 * pad - kh) / stride + 1;
  *Wo = (W + 2 * pad - kw) / stride + 1;
}

}  // namespace cyctr::kernels
