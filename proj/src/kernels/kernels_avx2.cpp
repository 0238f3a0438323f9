#include "civdg/kernels/kernels.hpp"

// AVX2+FMA variants of the f64 kernels.  This translation unit is the only
// one compiled with -mavx2 -mfma; dispatch.cpp decides at runtime whether
// the table below may be used.

#ifdef CIVDG_HAVE_AVX2

#include <immintrin.h>

#include <cmath>

namespace civdg::kernels {
namespace {

inline double hsum4(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

// sum_k a[k]*b[k] with two independent accumulators.
inline double dot_avx2(std::size_t n, const double* a, const double* b) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k),
                           acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k + 4),
                           _mm256_loadu_pd(b + k + 4), acc1);
  }
  if (k + 4 <= n) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k),
                           acc0);
    k += 4;
  }
  double acc = hsum4(_mm256_add_pd(acc0, acc1));
  for (; k < n; ++k) acc += a[k] * b[k];
  return acc;
}

// y[k] += a*x[k]
inline void axpy_row(std::size_t n, double a, const double* x, double* y) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    __m256d yv = _mm256_loadu_pd(y + k);
    yv = _mm256_fmadd_pd(av, _mm256_loadu_pd(x + k), yv);
    _mm256_storeu_pd(y + k, yv);
  }
  for (; k < n; ++k) y[k] += a * x[k];
}

void gemm_nt_acc_avx2(std::size_t rows, std::size_t n_in, std::size_t n_out,
                      const double* x, const double* w, double* dst) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x + i * n_in;
    double* di = dst + i * n_out;
    for (std::size_t j = 0; j < n_out; ++j) {
      di[j] += dot_avx2(n_in, xi, w + j * n_in);
    }
  }
}

void gemm_nn_acc_avx2(std::size_t rows, std::size_t n_out, std::size_t n_in,
                      const double* g, const double* w, double* dst) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* gi = g + i * n_out;
    double* di = dst + i * n_in;
    for (std::size_t j = 0; j < n_out; ++j) {
      axpy_row(n_in, gi[j], w + j * n_in, di);
    }
  }
}

void gemm_tn_acc_avx2(std::size_t rows, std::size_t n_out, std::size_t n_in,
                      const double* g, const double* x, double* dst) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* gi = g + i * n_out;
    const double* xi = x + i * n_in;
    for (std::size_t j = 0; j < n_out; ++j) {
      axpy_row(n_in, gi[j], xi, dst + j * n_in);
    }
  }
}

void axpy_avx2(std::size_t n, double a, const double* x, double* y) {
  axpy_row(n, a, x, y);
}

void scale_avx2(std::size_t n, double a, double* x) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    _mm256_storeu_pd(x + k, _mm256_mul_pd(av, _mm256_loadu_pd(x + k)));
  }
  for (; k < n; ++k) x[k] *= a;
}

void sub_avx2(std::size_t n, const double* a, const double* b, double* dst) {
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    _mm256_storeu_pd(
        dst + k, _mm256_sub_pd(_mm256_loadu_pd(a + k), _mm256_loadu_pd(b + k)));
  }
  for (; k < n; ++k) dst[k] = a[k] - b[k];
}

double sum_avx2(std::size_t n, const double* x) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + k));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + k + 4));
  }
  if (k + 4 <= n) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + k));
    k += 4;
  }
  double acc = hsum4(_mm256_add_pd(acc0, acc1));
  for (; k < n; ++k) acc += x[k];
  return acc;
}

double sumsq_avx2(std::size_t n, const double* x) { return dot_avx2(n, x, x); }

void leaky_relu_fwd_avx2(std::size_t n, double slope, const double* x,
                         double* dst) {
  const __m256d sv = _mm256_set1_pd(slope);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    __m256d xv = _mm256_loadu_pd(x + k);
    __m256d mask = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
    __m256d neg = _mm256_mul_pd(sv, xv);
    _mm256_storeu_pd(dst + k, _mm256_blendv_pd(neg, xv, mask));
  }
  for (; k < n; ++k) dst[k] = x[k] > 0.0 ? x[k] : slope * x[k];
}

void leaky_relu_bwd_avx2(std::size_t n, double slope, const double* x,
                         const double* g, double* dst) {
  const __m256d sv = _mm256_set1_pd(slope);
  const __m256d zero = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    __m256d xv = _mm256_loadu_pd(x + k);
    __m256d gv = _mm256_loadu_pd(g + k);
    __m256d mask = _mm256_cmp_pd(xv, zero, _CMP_GT_OQ);
    __m256d neg = _mm256_mul_pd(sv, gv);
    _mm256_storeu_pd(dst + k, _mm256_blendv_pd(neg, gv, mask));
  }
  for (; k < n; ++k) dst[k] = x[k] > 0.0 ? g[k] : slope * g[k];
}

void adamw_update_avx2(std::size_t n, double* w, const double* g, double* m,
                       double* v, double lr, double beta1, double beta2,
                       double eps, double lr_wd, double bc1, double bc2) {
  const __m256d b1 = _mm256_set1_pd(beta1);
  const __m256d b2 = _mm256_set1_pd(beta2);
  const __m256d one_m_b1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d one_m_b2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d bc1v = _mm256_set1_pd(bc1);
  const __m256d bc2v = _mm256_set1_pd(bc2);
  const __m256d epsv = _mm256_set1_pd(eps);
  const __m256d lrv = _mm256_set1_pd(lr);
  const __m256d decay = _mm256_set1_pd(lr_wd);
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d gv = _mm256_loadu_pd(g + k);
    __m256d mv = _mm256_loadu_pd(m + k);
    __m256d vv = _mm256_loadu_pd(v + k);
    mv = _mm256_fmadd_pd(b1, mv, _mm256_mul_pd(one_m_b1, gv));
    vv = _mm256_fmadd_pd(b2, vv, _mm256_mul_pd(one_m_b2, _mm256_mul_pd(gv, gv)));
    _mm256_storeu_pd(m + k, mv);
    _mm256_storeu_pd(v + k, vv);
    const __m256d mhat = _mm256_div_pd(mv, bc1v);
    const __m256d vhat = _mm256_div_pd(vv, bc2v);
    __m256d wv = _mm256_loadu_pd(w + k);
    wv = _mm256_fnmadd_pd(decay, wv, wv);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv);
    wv = _mm256_sub_pd(wv, _mm256_div_pd(_mm256_mul_pd(lrv, mhat), denom));
    _mm256_storeu_pd(w + k, wv);
  }
  for (; k < n; ++k) {
    const double gi = g[k];
    m[k] = beta1 * m[k] + (1.0 - beta1) * gi;
    v[k] = beta2 * v[k] + (1.0 - beta2) * (gi * gi);
    const double mhat = m[k] / bc1;
    const double vhat = v[k] / bc2;
    w[k] -= lr_wd * w[k];
    w[k] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

constexpr Ops kAvx2Ops = {
    gemm_nt_acc_avx2, gemm_nn_acc_avx2, gemm_tn_acc_avx2,
    axpy_avx2,        scale_avx2,       sub_avx2,
    dot_avx2,         sum_avx2,         sumsq_avx2,
    leaky_relu_fwd_avx2,                leaky_relu_bwd_avx2,
    adamw_update_avx2,
};

}  // namespace

const Ops* avx2_ops_table() { return &kAvx2Ops; }

}  // namespace civdg::kernels

#endif  // CIVDG_HAVE_AVX2
