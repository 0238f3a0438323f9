#pragma once

#include <utility>

#include "civdg/tensor.hpp"

namespace civdg {

// Fixed layer set of the computation kernel.  Forward passes are pure; the
// caller keeps whatever inputs the matching backward pass needs.

// out[i,j] = sum_k x[i,k] * w[j,k] + b[j].  x is [B x n], w is [m x n]
// (one row per output unit), b is [m].
DenseArray affine_forward(const DenseArray& x, const DenseArray& w,
                          const DenseArray& b);

// Gradients of a scalar loss through affine_forward.  g_out is [B x m];
// gw/gb are accumulated into, gx is overwritten.  Any of the gradient
// outputs may be null.
void affine_backward(const DenseArray& x, const DenseArray& w,
                     const DenseArray& g_out, DenseArray* gx, DenseArray* gw,
                     DenseArray* gb);

// Elementwise max(x, slope * x); slope must lie in (0, 1].
DenseArray leaky_relu(const DenseArray& x, double slope);
// g_in[i] = g_out[i] * (x[i] > 0 ? 1 : slope), x being the pre-activation.
DenseArray leaky_relu_backward(const DenseArray& x, const DenseArray& g_out,
                               double slope);

struct LossResult {
  double loss = 0.0;
  DenseArray probs;
};

// Mean negative log-likelihood over rows.  targets must be one-hot.
// The gradient w.r.t. logits is (probs - targets) / B.
LossResult softmax_ce(const DenseArray& logits, const DenseArray& targets);

// Mean binary cross-entropy over all B*C entries; targets in {0,1}.
// The gradient w.r.t. logits is (probs - targets) / (B*C).
LossResult sigmoid_bce(const DenseArray& logits, const DenseArray& targets);

struct SpectralNormResult {
  DenseArray w_sn;   // w / sigma
  DenseArray u_next; // power-iteration vector to persist
  DenseArray v;      // right vector from this step
  double sigma = 0.0;
  double t_norm = 0.0;  // ||w^T u|| before normalization (backward needs it)
};

// One-step power iteration estimate of the largest singular value, and the
// normalized matrix.  u must be unit norm.  A zero matrix yields sigma
// clamped to 1e-12 and w_sn = 0.
SpectralNormResult spectral_normalize(const DenseArray& w, const DenseArray& u,
                                      int n_power_iters);

// Exact gradient of loss w.r.t. the raw weight w, given the gradient g_sn
// w.r.t. w_sn = w / sigma(w) and the forward-pass vectors (stored u treated
// as a constant).  Accumulates into gw.
void spectral_normalize_backward(const DenseArray& w,
                                 const SpectralNormResult& fwd,
                                 const DenseArray& u_prev,
                                 const DenseArray& g_sn, DenseArray* gw);

}  // namespace civdg
