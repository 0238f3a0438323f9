#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "civdg/tensor.hpp"

namespace civdg {

// One learnable array with its gradient buffer.  sn_u is present exactly for
// spectrally normalized weight matrices and holds the persistent power
// iteration vector.
struct ParamEntry {
  std::string name;
  DenseArray value;
  DenseArray grad;
  std::optional<DenseArray> sn_u;
  bool grad_set = false;
  // Frozen entries (e.g. a fixed random projection) are serialized with the
  // store but never stepped and need no gradient.
  bool trainable = true;
};

// Ordered name -> entry map.  Iteration order is insertion order, which makes
// optimizer sweeps and serialization deterministic.
class ParameterStore {
 public:
  ParamEntry& add(const std::string& name, DenseArray value,
                  bool spectral_norm = false);

  bool has(const std::string& name) const {
    return index_.count(name) != 0;
  }
  ParamEntry& at(const std::string& name);
  const ParamEntry& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  ParamEntry& entry(std::size_t i) { return entries_[i]; }
  const ParamEntry& entry(std::size_t i) const { return entries_[i]; }

  std::int64_t total_values() const;
  void zero_grads();

  // Sum of squared values over all entries.
  double squared_norm() const;

  bool bitwise_equal(const ParameterStore& other) const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// AdamW state: first/second moment accumulators parallel to the store's
// entry order, one shared step counter, and the run hyperparameters.
struct OptimizerState {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;

  std::vector<DenseArray> m;
  std::vector<DenseArray> v;

  static OptimizerState for_store(const ParameterStore& params, double lr,
                                  double weight_decay);
};

// Bias-corrected AdamW with decoupled weight decay applied to the values.
// maximize negates the gradients (critic ascent).  Gradients must be
// populated for every entry and are zeroed afterwards.
void adamw_step(ParameterStore& params, OptimizerState& opt, bool maximize);

}  // namespace civdg
