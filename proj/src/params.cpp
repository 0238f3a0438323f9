#include "civdg/params.hpp"

#include <cmath>

#include "civdg/kernels/kernels.hpp"

namespace civdg {

ParamEntry& ParameterStore::add(const std::string& name, DenseArray value,
                                bool spectral_norm) {
  if (has(name)) throw StateError("ParameterStore: duplicate entry " + name);
  ParamEntry e;
  e.name = name;
  e.grad = DenseArray::zeros(value.shape());
  e.value = std::move(value);
  if (spectral_norm) {
    if (e.value.ndim() != 2)
      throw ValidationError("spectral norm state requires a 2-D weight: " +
                            name);
    e.sn_u = DenseArray({e.value.rows()});
  }
  index_[name] = entries_.size();
  entries_.push_back(std::move(e));
  return entries_.back();
}

ParamEntry& ParameterStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end())
    throw StateError("ParameterStore: no entry named " + name);
  return entries_[it->second];
}

const ParamEntry& ParameterStore::at(const std::string& name) const {
  return const_cast<ParameterStore*>(this)->at(name);
}

std::int64_t ParameterStore::total_values() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& e : entries_) {
    e.grad.fill(0.0);
    e.grad_set = false;
  }
}

double ParameterStore::squared_norm() const {
  const auto& ops = kernels::active();
  double acc = 0.0;
  for (const auto& e : entries_) {
    acc += ops.sumsq(static_cast<std::size_t>(e.value.size()), e.value.data());
  }
  return acc;
}

bool ParameterStore::bitwise_equal(const ParameterStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name != other.entries_[i].name) return false;
    if (!entries_[i].value.bitwise_equal(other.entries_[i].value)) return false;
  }
  return true;
}

OptimizerState OptimizerState::for_store(const ParameterStore& params,
                                         double lr, double weight_decay) {
  OptimizerState s;
  s.lr = lr;
  s.weight_decay = weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.push_back(DenseArray::zeros(params.entry(i).value.shape()));
    s.v.push_back(DenseArray::zeros(params.entry(i).value.shape()));
  }
  return s;
}

void adamw_step(ParameterStore& params, OptimizerState& opt, bool maximize) {
  if (opt.m.size() != params.size())
    throw StateError("adamw_step: optimizer state does not match store");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.entry(i).trainable && !params.entry(i).grad_set)
      throw StateError("adamw_step: gradient not populated for " +
                       params.entry(i).name);
  }
  const auto& ops = kernels::active();
  opt.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    ParamEntry& e = params.entry(i);
    if (!e.trainable) continue;
    const auto n = static_cast<std::size_t>(e.value.size());
    if (maximize) ops.scale(n, -1.0, e.grad.data());
    ops.adamw_update(n, e.value.data(), e.grad.data(), opt.m[i].data(),
                     opt.v[i].data(), opt.lr, opt.beta1, opt.beta2, opt.eps,
                     opt.lr * opt.weight_decay, bc1, bc2);
    debug_check_finite(e.value, "adamw_step");
  }
  params.zero_grads();
}

}  // namespace civdg
