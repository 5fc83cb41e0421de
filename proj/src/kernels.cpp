#include "cyctr/kernels.hpp"

#include <atomic>
#include <cstring>

namespace cyctr::kernels {

namespace {
std::atomic<bool> g_parallel{true};
}

void set_parallel(bool enabled) { g_parallel.store(enabled); }
bool parallel_enabled() { return g_parallel.load(); }

namespace serial {

void matmul_nn(const double* A, const double* B, double* C,
               int64_t m, int64_t k, int64_t n, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    if (!accumulate) {
      for (int64_t j = 0; j < n; ++j) crow[j] = 0.0;
    }
    const double* arow = A + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const double a = arow[p];
      const double* brow = B + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

void matmul_nt(const double* A, const double* B, double* C,
               int64_t m, int64_t k, int64_t n, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = A + i * k;
    double* crow = C + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double* brow = B + j * k;
      double acc = 0.0;
      for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void matmul_tn(const double* A, const double* B, double* C,
               int64_t m, int64_t k, int64_t n, bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    if (!accumulate) {
      for (int64_t j = 0; j < n; ++j) crow[j] = 0.0;
    }
    for (int64_t p = 0; p < k; ++p) {
      const double a = A[p * m + i];
      const double* brow = B + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

void conv2d_forward(const double* x, const double* w, const double* bias,
                    double* out, int64_t H, int64_t W, int64_t Cin,
                    int64_t kh, int64_t kw, int64_t Cout,
                    int64_t stride, int64_t pad) {
  int64_t Ho, Wo;
  conv2d_out_shape(H, W, kh, kw, stride, pad, &Ho, &Wo);
  for (int64_t oy = 0; oy < Ho; ++oy) {
    for (int64_t ox = 0; ox < Wo; ++ox) {
      double* orow = out + (oy * Wo + ox) * Cout;
      for (int64_t co = 0; co < Cout; ++co) orow[co] = bias ? bias[co] : 0.0;
      for (int64_t ky = 0; ky < kh; ++ky) {
        const int64_t iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (int64_t kx = 0; kx < kw; ++kx) {
          const int64_t ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const double* xpix = x + (iy * W + ix) * Cin;
          const double* wpos = w + ((ky * kw + kx) * Cin) * Cout;
          for (int64_t ci = 0; ci < Cin; ++ci) {
            const double xv = xpix[ci];
            const double* wrow = wpos + ci * Cout;
            for (int64_t co = 0; co < Cout; ++co) orow[co] += xv * wrow[co];
          }
        }
      }
    }
  }
}

}  // namespace serial

// Parallel versions split the output rows across threads; each element is
// still accumulated by exactly one thread in ascending-k order, so results
// match the serial reference bit for bit.

void matmul_nn(const double* A, const double* B, double* C,
               int64_t m, int64_t k, int64_t n, bool accumulate) {
  if (!g_parallel.load() || m < 2) {
    serial::matmul_nn(A, B, C, m, k, n, accumulate);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    serial::matmul_nn(A + i * k, B, C + i * n, 1, k, n, accumulate);
  }
}

void matmul_nt(const double* A, const double* B, double* C,
               int64_t m, int64_t k, int64_t n, bool accumulate) {
  if (!g_parallel.load() || m < 2) {
    serial::matmul_nt(A, B, C, m, k, n, accumulate);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    serial::matmul_nt(A + i * k, B, C + i * n, 1, k, n, accumulate);
  }
}

void matmul_tn(const double* A, const double* B, double* C,
               int64_t m, int64_t k, int64_t n, bool accumulate) {
  if (!g_parallel.load() || m < 2) {
    serial::matmul_tn(A, B, C, m, k, n, accumulate);
    return;
  }
  // Columns of A^T are strided; parallelize over output rows i, reading
  // A[p*m + i] per thread. Same accumulation order as the reference.
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    if (!accumulate) {
      for (int64_t j = 0; j < n; ++j) crow[j] = 0.0;
    }
    for (int64_t p = 0; p < k; ++p) {
      const double a = A[p * m + i];
      const double* brow = B + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

void conv2d_forward(const double* x, const double* w, const double* bias,
                    double* out, int64_t H, int64_t W, int64_t Cin,
                    int64_t kh, int64_t kw, int64_t Cout,
                    int64_t stride, int64_t pad) {
  int64_t Ho, Wo;
  conv2d_out_shape(H, W, kh, kw, stride, pad, &Ho, &Wo);
  if (!g_parallel.load() || Ho < 2) {
    serial::conv2d_forward(x, w, bias, out, H, W, Cin, kh, kw, Cout, stride, pad);
    return;
  }
#pragma omp parallel for schedule(static)
  for (int64_t oy = 0; oy < Ho; ++oy) {
    for (int64_t ox = 0; ox < Wo; ++ox) {
      double* orow = out + (oy * Wo + ox) * Cout;
      for (int64_t co = 0; co < Cout; ++co) orow[co] = bias ? bias[co] : 0.0;
      for (int64_t ky = 0; ky < kh; ++ky) {
        const int64_t iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (int64_t kx = 0; kx < kw; ++kx) {
          const int64_t ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const double* xpix = x + (iy * W + ix) * Cin;
          const double* wpos = w + ((ky * kw + kx) * Cin) * Cout;
          for (int64_t ci = 0; ci < Cin; ++ci) {
            const double xv = xpix[ci];
            const double* wrow = wpos + ci * Cout;
            for (int64_t co = 0; co < Cout; ++co) orow[co] += xv * wrow[co];
          }
        }
      }
    }
  }
}

}  // namespace cyctr::kernels
