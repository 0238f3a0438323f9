#pragma once

#include <cstdint>
#include <vector>

#include "civdg/layers.hpp"
#include "civdg/params.hpp"

namespace civdg {

// Predictor f(X, D): optional frozen projection of the precomputed
// features, optional stratum embedding appended, adapter MLP, classifier
// head.
struct PredictorSpec {
  int feature_dim = 16;
  std::vector<int> hidden_dims = {32};
  int n_classes = 2;
  bool use_demographics = true;
  int d_embed_dim = 8;
  int n_strata = 2;
  bool multi_label = false;
  double leaky_slope = 0.01;
  // > 0 replaces the identity encoder with a fixed random projection of
  // this output width (never trained).
  int frozen_projection_dim = 0;
};

// Critic c(Z, D): learnable site/stratum embeddings into an MLP whose
// weights are spectrally normalized, LeakyReLU between layers, linear last
// layer, output dimension M.
struct CriticSpec {
  int n_sites = 5;
  int n_strata = 2;
  int z_embed_dim = 8;
  int d_embed_dim = 8;
  int hidden_dim = 32;
  int n_layers = 3;
  int output_dim = 8;
  double leaky_slope = 0.01;
};

void validate(const PredictorSpec& spec);
void validate(const CriticSpec& spec);

// Deterministic initialization: weights uniform with fan-in scaling
// (limit sqrt(6/fan_in)), biases zero, embeddings N(0, 0.02^2), power
// iteration vectors unit Gaussian.
ParameterStore init_predictor_params(const PredictorSpec& spec,
                                     std::uint64_t seed);
ParameterStore init_critic_params(const CriticSpec& spec, std::uint64_t seed);

// logits -> probabilities per task mode (softmax rows or elementwise
// sigmoid).
DenseArray probs_from_logits(const DenseArray& logits, bool multi_label);

class Predictor {
 public:
  struct Cache {
    DenseArray input;                // adapter input (after projection/concat)
    std::vector<DenseArray> pre;     // pre-activations per hidden layer
    std::vector<DenseArray> post;    // activations fed to the next layer
    std::vector<int> d;
  };

  Predictor(PredictorSpec spec, std::uint64_t seed);

  // Pure forward; fills cache for backward when given.
  DenseArray forward(const DenseArray& x, const std::vector<int>& d,
                     Cache* cache = nullptr) const;
  // Accumulates parameter gradients from dL/dlogits.
  void backward(const Cache& cache, const DenseArray& g_logits);

  const PredictorSpec& spec() const { return spec_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

 private:
  PredictorSpec spec_;
  ParameterStore params_;
};

class Critic {
 public:
  struct Cache {
    DenseArray input;  // concatenated embeddings
    std::vector<DenseArray> pre;
    std::vector<DenseArray> post;
    std::vector<SpectralNormResult> sn;
    std::vector<DenseArray> u_prev;
    std::vector<int> z, d;
  };

  Critic(CriticSpec spec, std::uint64_t seed);

  // training=true advances the persistent power-iteration vectors; any
  // other state is untouched by forward.
  DenseArray forward(const std::vector<int>& z, const std::vector<int>& d,
                     bool training, Cache* cache = nullptr);
  // Accumulates gradients (embeddings included) from dL/doutput.
  void backward(const Cache& cache, const DenseArray& g_out);

  const CriticSpec& spec() const { return spec_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

 private:
  CriticSpec spec_;
  ParameterStore params_;
};

}  // namespace civdg
