#include "civdg/layers.hpp"

#include <cmath>

#include "civdg/kernels/kernels.hpp"

namespace civdg {
namespace {

void require_2d(const DenseArray& a, const char* what) {
  if (a.ndim() != 2) throw DimensionError(std::string(what) + ": expected 2-D");
}

}  // namespace

DenseArray affine_forward(const DenseArray& x, const DenseArray& w,
                          const DenseArray& b) {
  require_2d(x, "affine_forward x");
  require_2d(w, "affine_forward w");
  if (x.cols() != w.cols())
    throw DimensionError("affine_forward: inner dimensions disagree, x " +
                         x.shape_str() + " vs w " + w.shape_str());
  if (b.ndim() != 1 || b.dim(0) != w.rows())
    throw DimensionError("affine_forward: bias shape " + b.shape_str() +
                         " does not match " + std::to_string(w.rows()) +
                         " outputs");
  const std::int64_t batch = x.rows();
  const std::int64_t m = w.rows();
  DenseArray out({batch, m});
  for (std::int64_t i = 0; i < batch; ++i) {
    double* row = out.row_ptr(i);
    for (std::int64_t j = 0; j < m; ++j) row[j] = b[j];
  }
  kernels::active().gemm_nt_acc(static_cast<std::size_t>(batch),
                                static_cast<std::size_t>(x.cols()),
                                static_cast<std::size_t>(m), x.data(), w.data(),
                                out.data());
  debug_check_finite(out, "affine_forward");
  return out;
}

void affine_backward(const DenseArray& x, const DenseArray& w,
                     const DenseArray& g_out, DenseArray* gx, DenseArray* gw,
                     DenseArray* gb) {
  const auto batch = static_cast<std::size_t>(x.rows());
  const auto n = static_cast<std::size_t>(x.cols());
  const auto m = static_cast<std::size_t>(w.rows());
  g_out.require_shape({x.rows(), w.rows()}, "affine_backward g_out");
  const auto& ops = kernels::active();
  if (gx != nullptr) {
    gx->require_shape(x.shape(), "affine_backward gx");
    gx->fill(0.0);
    ops.gemm_nn_acc(batch, m, n, g_out.data(), w.data(), gx->data());
  }
  if (gw != nullptr) {
    gw->require_shape(w.shape(), "affine_backward gw");
    ops.gemm_tn_acc(batch, m, n, g_out.data(), x.data(), gw->data());
  }
  if (gb != nullptr) {
    gb->require_shape({w.rows()}, "affine_backward gb");
    for (std::size_t i = 0; i < batch; ++i) {
      ops.axpy(m, 1.0, g_out.row_ptr(static_cast<std::int64_t>(i)),
               gb->data());
    }
  }
}

DenseArray leaky_relu(const DenseArray& x, double slope) {
  if (!(slope > 0.0 && slope <= 1.0))
    throw ValidationError("leaky_relu: slope must lie in (0,1]");
  DenseArray out(x.shape());
  kernels::active().leaky_relu_fwd(static_cast<std::size_t>(x.size()), slope,
                                   x.data(), out.data());
  return out;
}

DenseArray leaky_relu_backward(const DenseArray& x, const DenseArray& g_out,
                               double slope) {
  g_out.require_shape(x.shape(), "leaky_relu_backward");
  DenseArray out(x.shape());
  kernels::active().leaky_relu_bwd(static_cast<std::size_t>(x.size()), slope,
                                   x.data(), g_out.data(), out.data());
  return out;
}

LossResult softmax_ce(const DenseArray& logits, const DenseArray& targets) {
  require_2d(logits, "softmax_ce logits");
  targets.require_shape(logits.shape(), "softmax_ce targets");
  const std::int64_t batch = logits.rows();
  const std::int64_t classes = logits.cols();
  LossResult res;
  res.probs = DenseArray(logits.shape());
  double loss = 0.0;
  for (std::int64_t i = 0; i < batch; ++i) {
    const double* t = targets.row_ptr(i);
    std::int64_t hot = -1;
    for (std::int64_t c = 0; c < classes; ++c) {
      if (t[c] == 1.0 && hot < 0) {
        hot = c;
      } else if (t[c] != 0.0) {
        throw ValidationError("softmax_ce: target row " + std::to_string(i) +
                              " is not one-hot");
      }
    }
    if (hot < 0)
      throw ValidationError("softmax_ce: target row " + std::to_string(i) +
                            " is not one-hot");
    const double* s = logits.row_ptr(i);
    double mx = s[0];
    for (std::int64_t c = 1; c < classes; ++c) mx = std::max(mx, s[c]);
    double denom = 0.0;
    for (std::int64_t c = 0; c < classes; ++c) denom += std::exp(s[c] - mx);
    double* p = res.probs.row_ptr(i);
    for (std::int64_t c = 0; c < classes; ++c)
      p[c] = std::exp(s[c] - mx) / denom;
    loss += std::log(denom) - (s[hot] - mx);
  }
  res.loss = loss / static_cast<double>(batch);
  debug_check_finite(res.probs, "softmax_ce");
  return res;
}

LossResult sigmoid_bce(const DenseArray& logits, const DenseArray& targets) {
  require_2d(logits, "sigmoid_bce logits");
  targets.require_shape(logits.shape(), "sigmoid_bce targets");
  LossResult res;
  res.probs = DenseArray(logits.shape());
  double loss = 0.0;
  for (std::int64_t i = 0; i < logits.size(); ++i) {
    const double t = targets[i];
    if (t != 0.0 && t != 1.0)
      throw ValidationError("sigmoid_bce: targets must be binary");
    const double s = logits[i];
    res.probs[i] = 1.0 / (1.0 + std::exp(-s));
    // max(s,0) - s*t + log(1 + exp(-|s|)), the overflow-safe form.
    loss += std::max(s, 0.0) - s * t + std::log1p(std::exp(-std::abs(s)));
  }
  res.loss = loss / static_cast<double>(logits.size());
  return res;
}

SpectralNormResult spectral_normalize(const DenseArray& w, const DenseArray& u,
                                      int n_power_iters) {
  require_2d(w, "spectral_normalize w");
  if (u.ndim() != 1 || u.dim(0) != w.rows())
    throw DimensionError("spectral_normalize: u must have one entry per row");
  if (n_power_iters < 1)
    throw ValidationError("spectral_normalize: n_power_iters must be >= 1");
  const auto m = static_cast<std::size_t>(w.rows());
  const auto n = static_cast<std::size_t>(w.cols());
  const auto& ops = kernels::active();

  SpectralNormResult res;
  DenseArray u_cur = u;
  DenseArray v({w.cols()});
  DenseArray wv({w.rows()});
  double t_norm = 0.0;
  double wv_norm = 0.0;
  for (int iter = 0; iter < n_power_iters; ++iter) {
    v.fill(0.0);
    ops.gemm_nn_acc(1, m, n, u_cur.data(), w.data(), v.data());
    t_norm = std::sqrt(ops.sumsq(n, v.data()));
    if (t_norm < 1e-150) {
      // Power iteration collapsed (zero matrix or u in the left null space).
      res.w_sn = DenseArray::zeros(w.shape());
      res.u_next = u;
      res.v = DenseArray::zeros({w.cols()});
      res.sigma = 1e-12;
      res.t_norm = 0.0;
      return res;
    }
    ops.scale(n, 1.0 / t_norm, v.data());
    wv.fill(0.0);
    ops.gemm_nt_acc(1, n, m, v.data(), w.data(), wv.data());
    wv_norm = std::sqrt(ops.sumsq(m, wv.data()));
    if (wv_norm < 1e-150) {
      res.w_sn = DenseArray::zeros(w.shape());
      res.u_next = u;
      res.v = v;
      res.sigma = 1e-12;
      res.t_norm = t_norm;
      return res;
    }
    u_cur = wv;
    ops.scale(m, 1.0 / wv_norm, u_cur.data());
  }
  res.sigma = std::max(wv_norm, 1e-12);
  res.u_next = std::move(u_cur);
  res.v = std::move(v);
  res.t_norm = t_norm;
  res.w_sn = w;
  ops.scale(m * n, 1.0 / res.sigma, res.w_sn.data());
  debug_check_finite(res.w_sn, "spectral_normalize");
  return res;
}

void spectral_normalize_backward(const DenseArray& w,
                                 const SpectralNormResult& fwd,
                                 const DenseArray& u_prev,
                                 const DenseArray& g_sn, DenseArray* gw) {
  g_sn.require_shape(w.shape(), "spectral_normalize_backward g_sn");
  gw->require_shape(w.shape(), "spectral_normalize_backward gw");
  const auto m = static_cast<std::size_t>(w.rows());
  const auto n = static_cast<std::size_t>(w.cols());
  const auto& ops = kernels::active();

  if (fwd.t_norm == 0.0) {
    // Degenerate forward returned w_sn = 0; propagate the raw gradient so
    // the optimizer can move off the dead point.
    ops.axpy(m * n, 1.0, g_sn.data(), gw->data());
    return;
  }

  // d(w/sigma) with sigma = ||w v||, v = w^T u_prev / ||w^T u_prev||,
  // u_prev constant:
  //   dL/dw = g_sn / sigma - (<g_sn, w_sn> / sigma) * grad_sigma,
  //   grad_sigma = u_next v^T + u_prev q^T / ||w^T u_prev||,
  //   q = w^T u_next - sigma v.
  const double s = ops.dot(m * n, g_sn.data(), fwd.w_sn.data());

  DenseArray q({w.cols()});
  ops.gemm_nn_acc(1, m, n, fwd.u_next.data(), w.data(), q.data());
  ops.axpy(n, -fwd.sigma, fwd.v.data(), q.data());

  const double c = -s / fwd.sigma;
  for (std::size_t i = 0; i < m; ++i) {
    double* grow = gw->data() + i * n;
    ops.axpy(n, 1.0 / fwd.sigma, g_sn.data() + i * n, grow);
    ops.axpy(n, c * fwd.u_next[static_cast<std::int64_t>(i)], fwd.v.data(),
             grow);
    ops.axpy(n, c * u_prev[static_cast<std::int64_t>(i)] / fwd.t_norm,
             q.data(), grow);
  }
}

}  // namespace civdg
