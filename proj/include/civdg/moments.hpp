#pragma once

#include <cstdint>
#include <vector>

#include "civdg/tensor.hpp"

namespace civdg {

// Running stratum means of the critic output, updated by EMA during
// training.  Stratum ids are dense 0..K-1; a stratum stays uninitialized
// until the first training batch that contains it.
struct MomentState {
  double momentum = 0.9;
  DenseArray mu;  // [K x M]
  std::vector<std::uint8_t> initialized;

  MomentState() = default;
  MomentState(std::int64_t n_strata, std::int64_t dim, double momentum = 0.9);

  std::int64_t n_strata() const { return mu.rows(); }
  std::int64_t dim() const { return mu.cols(); }
  bool bitwise_equal(const MomentState& other) const;
};

// e = y - p.  y must be 0/1 valued (one-hot or multi-hot), p must lie in
// [0, 1], so every residual entry lands in [-1, 1].
DenseArray compute_residuals(const DenseArray& y, const DenseArray& p);

// Subtracts the running stratum mean from each row.  training=true also
// folds the batch means into the EMA: initialized strata keep centering by
// the PRE-update mean and then move, first-sight strata center by their own
// batch mean and adopt it, absent strata are untouched.  training=false
// mutates nothing and throws ColdStratumError if a present stratum has no
// mean yet.
DenseArray center_instruments(const DenseArray& c, const std::vector<int>& d,
                              MomentState& state, bool training);

// m_hat[c, m] = (1/B) * sum_i e[i, c] * centered[i, m].
DenseArray moment_matrix(const DenseArray& e, const DenseArray& centered);

// Squared Frobenius norm of the moment matrix.
double gmm_loss(const DenseArray& m_hat);
// d gmm_loss / d m_hat = 2 * m_hat.
DenseArray gmm_loss_backward(const DenseArray& m_hat);

// Chain rule from dL/de back to dL/dlogits given probabilities p
// (e = y - p, so the sign flips through the task head's Jacobian).
DenseArray residual_grad_to_logits(const DenseArray& probs,
                                   const DenseArray& g_e, bool multi_label);

// dL/de given dL/dm_hat: g_e[i,c] = (1/B) * sum_m g_m[c,m] * centered[i,m].
DenseArray moment_grad_to_residuals(const DenseArray& g_m,
                                    const DenseArray& centered);
// dL/dcentered given dL/dm_hat: g_c[i,m] = (1/B) * sum_c g_m[c,m] * e[i,c].
// The running means are constants per step, so this is also dL/d(critic out).
DenseArray moment_grad_to_centered(const DenseArray& g_m,
                                   const DenseArray& e);

// Exact in-batch stratum centering; diagnostics and tests use this, the
// training path uses the EMA above.
DenseArray exact_center(const DenseArray& c, const std::vector<int>& d);

// One batch worth of moment quantities.
struct MomentBatch {
  DenseArray residuals;                     // [B x C]
  DenseArray centered;                      // [B x M]
  DenseArray moment;                        // [C x M]
  std::vector<std::int64_t> stratum_counts; // length K, sums to B
};

MomentBatch build_moment_batch(const DenseArray& y, const DenseArray& p,
                               const DenseArray& critic_out,
                               const std::vector<int>& d, MomentState& state,
                               bool training);

}  // namespace civdg
