#pragma once

#include <cstddef>
#include <string>

namespace civdg::kernels {

// Flat table of the f64 inner loops everything else is built from.
// Matrices are row-major. "acc" kernels accumulate into dst, so callers
// decide between overwrite (zero/bias-fill first) and accumulation.
struct Ops {
  // dst[i*n_out + j] += sum_k x[i*n_in + k] * w[j*n_in + k]
  // (affine forward: w holds one output row per input fan-in)
  void (*gemm_nt_acc)(std::size_t rows, std::size_t n_in, std::size_t n_out,
                      const double* x, const double* w, double* dst);
  // dst[i*n_in + k] += sum_j g[i*n_out + j] * w[j*n_in + k]
  // (affine backward w.r.t. inputs)
  void (*gemm_nn_acc)(std::size_t rows, std::size_t n_out, std::size_t n_in,
                      const double* g, const double* w, double* dst);
  // dst[j*n_in + k] += sum_i g[i*n_out + j] * x[i*n_in + k]
  // (affine backward w.r.t. weights; also residual/instrument outer products)
  void (*gemm_tn_acc)(std::size_t rows, std::size_t n_out, std::size_t n_in,
                      const double* g, const double* x, double* dst);

  void (*axpy)(std::size_t n, double a, const double* x, double* y);
  void (*scale)(std::size_t n, double a, double* x);
  // dst = a - b
  void (*sub)(std::size_t n, const double* a, const double* b, double* dst);
  double (*dot)(std::size_t n, const double* x, const double* y);
  double (*sum)(std::size_t n, const double* x);
  double (*sumsq)(std::size_t n, const double* x);

  void (*leaky_relu_fwd)(std::size_t n, double slope, const double* x,
                         double* dst);
  // dst[i] = g[i] * (x[i] > 0 ? 1 : slope), x is the pre-activation
  void (*leaky_relu_bwd)(std::size_t n, double slope, const double* x,
                         const double* g, double* dst);

  // One fused AdamW element update.  m/v are the moment accumulators,
  // bc1/bc2 the bias-correction divisors (1 - beta^t), wd the decoupled
  // decay already multiplied by lr.
  void (*adamw_update)(std::size_t n, double* w, const double* g, double* m,
                       double* v, double lr, double beta1, double beta2,
                       double eps, double lr_wd, double bc1, double bc2);
};

enum class Backend { kScalar, kAvx2, kAuto };

// Scalar reference table; always available.
const Ops& scalar_ops();
// AVX2+FMA table; nullptr when not compiled in or not supported by the CPU.
const Ops* avx2_ops();

// Active table used by the rest of the library.  Resolution order:
// explicit set_backend() > CIVDG_KERNEL_BACKEND env var > best supported.
const Ops& active();
void set_backend(Backend b);
Backend active_backend();
std::string backend_name();

}  // namespace civdg::kernels
