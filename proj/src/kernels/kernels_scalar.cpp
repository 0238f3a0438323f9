#include "civdg/kernels/kernels.hpp"

#include <cmath>

// Reference kernels.  Plain loops, no reassociation: this file is compiled
// with -ffp-contract=off so results are a fixed IEEE mul/add sequence and
// serve as the equivalence baseline for the SIMD variants.

namespace civdg::kernels {
namespace {

void gemm_nt_acc_scalar(std::size_t rows, std::size_t n_in, std::size_t n_out,
                        const double* x, const double* w, double* dst) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x + i * n_in;
    double* di = dst + i * n_out;
    for (std::size_t j = 0; j < n_out; ++j) {
      const double* wj = w + j * n_in;
      double acc = 0.0;
      for (std::size_t k = 0; k < n_in; ++k) acc += xi[k] * wj[k];
      di[j] += acc;
    }
  }
}

void gemm_nn_acc_scalar(std::size_t rows, std::size_t n_out, std::size_t n_in,
                        const double* g, const double* w, double* dst) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* gi = g + i * n_out;
    double* di = dst + i * n_in;
    for (std::size_t j = 0; j < n_out; ++j) {
      const double gij = gi[j];
      const double* wj = w + j * n_in;
      for (std::size_t k = 0; k < n_in; ++k) di[k] += gij * wj[k];
    }
  }
}

void gemm_tn_acc_scalar(std::size_t rows, std::size_t n_out, std::size_t n_in,
                        const double* g, const double* x, double* dst) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* gi = g + i * n_out;
    const double* xi = x + i * n_in;
    for (std::size_t j = 0; j < n_out; ++j) {
      const double gij = gi[j];
      double* dj = dst + j * n_in;
      for (std::size_t k = 0; k < n_in; ++k) dj[k] += gij * xi[k];
    }
  }
}

void axpy_scalar(std::size_t n, double a, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_scalar(std::size_t n, double a, double* x) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void sub_scalar(std::size_t n, const double* a, const double* b, double* dst) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = a[i] - b[i];
}

double dot_scalar(std::size_t n, const double* x, const double* y) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double sum_scalar(std::size_t n, const double* x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double sumsq_scalar(std::size_t n, const double* x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * x[i];
  return acc;
}

void leaky_relu_fwd_scalar(std::size_t n, double slope, const double* x,
                           double* dst) {
  for (std::size_t i = 0; i < n; ++i) {
    dst[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  }
}

void leaky_relu_bwd_scalar(std::size_t n, double slope, const double* x,
                           const double* g, double* dst) {
  for (std::size_t i = 0; i < n; ++i) {
    dst[i] = x[i] > 0.0 ? g[i] : slope * g[i];
  }
}

void adamw_update_scalar(std::size_t n, double* w, const double* g, double* m,
                         double* v, double lr, double beta1, double beta2,
                         double eps, double lr_wd, double bc1, double bc2) {
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = g[i];
    m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
    v[i] = beta2 * v[i] + (1.0 - beta2) * (gi * gi);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    w[i] -= lr_wd * w[i];
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

constexpr Ops kScalarOps = {
    gemm_nt_acc_scalar, gemm_nn_acc_scalar, gemm_tn_acc_scalar,
    axpy_scalar,        scale_scalar,       sub_scalar,
    dot_scalar,         sum_scalar,         sumsq_scalar,
    leaky_relu_fwd_scalar,                  leaky_relu_bwd_scalar,
    adamw_update_scalar,
};

}  // namespace

const Ops& scalar_ops() { return kScalarOps; }

}  // namespace civdg::kernels
