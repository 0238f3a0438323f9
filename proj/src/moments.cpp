#include "civdg/moments.hpp"

#include <string>

#include "civdg/errors.hpp"
#include "civdg/kernels/kernels.hpp"

namespace civdg {
namespace {

void check_rows_match(const DenseArray& a, const DenseArray& b,
                      const char* context) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ValidationError(std::string(context) + ": inputs must be 2-D");
  if (a.rows() != b.rows())
    throw DimensionError(std::string(context) + ": batch sizes differ, " +
                         a.shape_str() + " vs " + b.shape_str());
}

void check_ids(const std::vector<int>& d, std::int64_t n_strata,
               const char* context) {
  for (int v : d) {
    if (v < 0 || v >= n_strata)
      throw ValidationError(std::string(context) + ": stratum id " +
                            std::to_string(v) + " out of range [0, " +
                            std::to_string(n_strata) + ")");
  }
}

}  // namespace

MomentState::MomentState(std::int64_t n_strata, std::int64_t dim,
                         double momentum_in)
    : momentum(momentum_in),
      mu({n_strata, dim}),
      initialized(static_cast<std::size_t>(n_strata), 0) {
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ValidationError("MomentState: momentum must lie in [0, 1)");
}

bool MomentState::bitwise_equal(const MomentState& other) const {
  return momentum == other.momentum && initialized == other.initialized &&
         mu.bitwise_equal(other.mu);
}

DenseArray compute_residuals(const DenseArray& y, const DenseArray& p) {
  if (y.ndim() != 2 || p.ndim() != 2 || y.shape() != p.shape())
    throw DimensionError("compute_residuals: shapes differ, " + y.shape_str() +
                         " vs " + p.shape_str());
  for (std::int64_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0 && y[i] != 1.0)
      throw ValidationError("compute_residuals: labels must be 0/1 valued");
    if (!(p[i] >= 0.0 && p[i] <= 1.0))
      throw ValidationError(
          "compute_residuals: probabilities must lie in [0, 1]");
  }
  DenseArray e(y.shape());
  kernels::active().sub(static_cast<std::size_t>(y.size()), y.data(), p.data(),
                        e.data());
  return e;
}

DenseArray center_instruments(const DenseArray& c, const std::vector<int>& d,
                              MomentState& state, bool training) {
  if (c.ndim() != 2 || c.cols() != state.dim())
    throw DimensionError("center_instruments: c must be [B x " +
                         std::to_string(state.dim()) + "], got " +
                         c.shape_str());
  if (static_cast<std::int64_t>(d.size()) != c.rows())
    throw DimensionError("center_instruments: id count mismatch");
  check_ids(d, state.n_strata(), "center_instruments");

  const std::int64_t batch = c.rows();
  const std::int64_t m = c.cols();
  const std::int64_t k = state.n_strata();

  DenseArray sums = DenseArray::zeros({k, m});
  std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
  for (std::int64_t i = 0; i < batch; ++i) {
    const int s = d[static_cast<std::size_t>(i)];
    kernels::active().axpy(m, 1.0, c.row_ptr(i), sums.row_ptr(s));
    ++counts[static_cast<std::size_t>(s)];
  }
  DenseArray batch_mean({k, m});
  for (std::int64_t s = 0; s < k; ++s) {
    if (counts[static_cast<std::size_t>(s)] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[s]);
    for (std::int64_t j = 0; j < m; ++j)
      batch_mean.at(s, j) = sums.at(s, j) * inv;
  }

  if (!training) {
    for (std::int64_t s = 0; s < k; ++s)
      if (counts[static_cast<std::size_t>(s)] > 0 &&
          !state.initialized[static_cast<std::size_t>(s)])
        throw ColdStratumError(static_cast<int>(s));
  }

  // pre-update means for initialized strata, own batch mean for first sight
  DenseArray centered = c;
  for (std::int64_t i = 0; i < batch; ++i) {
    const int s = d[static_cast<std::size_t>(i)];
    const double* mean = state.initialized[static_cast<std::size_t>(s)]
                             ? state.mu.row_ptr(s)
                             : batch_mean.row_ptr(s);
    kernels::active().axpy(m, -1.0, mean, centered.row_ptr(i));
  }

  if (training) {
    for (std::int64_t s = 0; s < k; ++s) {
      if (counts[static_cast<std::size_t>(s)] == 0) continue;
      if (state.initialized[static_cast<std::size_t>(s)]) {
        double* mu = state.mu.row_ptr(s);
        for (std::int64_t j = 0; j < m; ++j)
          mu[j] = state.momentum * mu[j] +
                  (1.0 - state.momentum) * batch_mean.at(s, j);
      } else {
        std::copy(batch_mean.row_ptr(s), batch_mean.row_ptr(s) + m,
                  state.mu.row_ptr(s));
        state.initialized[static_cast<std::size_t>(s)] = 1;
      }
    }
  }
  return centered;
}

DenseArray moment_matrix(const DenseArray& e, const DenseArray& centered) {
  if (e.empty() || centered.empty())
    throw ValidationError("moment_matrix: empty batch");
  check_rows_match(e, centered, "moment_matrix");
  const std::int64_t batch = e.rows();
  DenseArray m_hat = DenseArray::zeros({e.cols(), centered.cols()});
  kernels::active().gemm_tn_acc(batch, e.cols(), centered.cols(), e.data(),
                                centered.data(), m_hat.data());
  kernels::active().scale(m_hat.size(), 1.0 / static_cast<double>(batch),
                          m_hat.data());
  return m_hat;
}

double gmm_loss(const DenseArray& m_hat) {
  return kernels::active().sumsq(m_hat.size(), m_hat.data());
}

DenseArray gmm_loss_backward(const DenseArray& m_hat) {
  DenseArray g = m_hat;
  kernels::active().scale(g.size(), 2.0, g.data());
  return g;
}

DenseArray residual_grad_to_logits(const DenseArray& probs,
                                   const DenseArray& g_e, bool multi_label) {
  if (probs.ndim() != 2 || probs.shape() != g_e.shape())
    throw DimensionError("residual_grad_to_logits: shape mismatch, " +
                         probs.shape_str() + " vs " + g_e.shape_str());
  DenseArray g_s(probs.shape());
  if (multi_label) {
    for (std::int64_t i = 0; i < probs.size(); ++i)
      g_s[i] = -g_e[i] * probs[i] * (1.0 - probs[i]);
    return g_s;
  }
  // softmax Jacobian: ds_j = -p_j * (g_e_j - <g_e, p>)
  for (std::int64_t i = 0; i < probs.rows(); ++i) {
    const double* p = probs.row_ptr(i);
    const double* ge = g_e.row_ptr(i);
    double inner = 0.0;
    for (std::int64_t c = 0; c < probs.cols(); ++c) inner += ge[c] * p[c];
    double* out = g_s.row_ptr(i);
    for (std::int64_t c = 0; c < probs.cols(); ++c)
      out[c] = -p[c] * (ge[c] - inner);
  }
  return g_s;
}

DenseArray moment_grad_to_residuals(const DenseArray& g_m,
                                    const DenseArray& centered) {
  const std::int64_t batch = centered.rows();
  DenseArray g_e = DenseArray::zeros({batch, g_m.rows()});
  kernels::active().gemm_nt_acc(batch, centered.cols(), g_m.rows(),
                                centered.data(), g_m.data(), g_e.data());
  kernels::active().scale(g_e.size(), 1.0 / static_cast<double>(batch),
                          g_e.data());
  return g_e;
}

DenseArray moment_grad_to_centered(const DenseArray& g_m,
                                   const DenseArray& e) {
  const std::int64_t batch = e.rows();
  DenseArray g_c = DenseArray::zeros({batch, g_m.cols()});
  kernels::active().gemm_nn_acc(batch, e.cols(), g_m.cols(), e.data(),
                                g_m.data(), g_c.data());
  kernels::active().scale(g_c.size(), 1.0 / static_cast<double>(batch),
                          g_c.data());
  return g_c;
}

DenseArray exact_center(const DenseArray& c, const std::vector<int>& d) {
  if (c.ndim() != 2)
    throw ValidationError("exact_center: c must be 2-D");
  if (static_cast<std::int64_t>(d.size()) != c.rows())
    throw DimensionError("exact_center: id count mismatch");
  std::int64_t k = 0;
  for (int v : d) {
    if (v < 0) throw ValidationError("exact_center: negative stratum id");
    k = std::max<std::int64_t>(k, v + 1);
  }

  const std::int64_t m = c.cols();
  DenseArray sums = DenseArray::zeros({k, m});
  std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
  for (std::int64_t i = 0; i < c.rows(); ++i) {
    kernels::active().axpy(m, 1.0, c.row_ptr(i),
                           sums.row_ptr(d[static_cast<std::size_t>(i)]));
    ++counts[static_cast<std::size_t>(d[static_cast<std::size_t>(i)])];
  }
  for (std::int64_t s = 0; s < k; ++s) {
    if (counts[static_cast<std::size_t>(s)] == 0) continue;
    const double inv = 1.0 / static_cast<double>(counts[s]);
    kernels::active().scale(m, inv, sums.row_ptr(s));
  }
  DenseArray centered = c;
  for (std::int64_t i = 0; i < c.rows(); ++i)
    kernels::active().axpy(m, -1.0,
                           sums.row_ptr(d[static_cast<std::size_t>(i)]),
                           centered.row_ptr(i));
  return centered;
}

MomentBatch build_moment_batch(const DenseArray& y, const DenseArray& p,
                               const DenseArray& critic_out,
                               const std::vector<int>& d, MomentState& state,
                               bool training) {
  MomentBatch out;
  out.residuals = compute_residuals(y, p);
  check_rows_match(out.residuals, critic_out, "build_moment_batch");
  out.centered = center_instruments(critic_out, d, state, training);
  out.moment = moment_matrix(out.residuals, out.centered);
  out.stratum_counts.assign(static_cast<std::size_t>(state.n_strata()), 0);
  for (int v : d) ++out.stratum_counts[static_cast<std::size_t>(v)];
  return out;
}

}  // namespace civdg
