#include "civdg/checkpoint.hpp"

#include <cstring>

#include "civdg/binio.hpp"

namespace civdg {
namespace {

constexpr char kMagic[4] = {'C', 'I', 'V', 'C'};
constexpr std::uint16_t kVersion = 1;

void write_array(std::ostream& os, const DenseArray& a) {
  binio::write_pod<std::int64_t>(os, a.ndim());
  for (std::int64_t i = 0; i < a.ndim(); ++i)
    binio::write_pod<std::int64_t>(os, a.shape()[static_cast<std::size_t>(i)]);
  binio::write_doubles(os, a.data(), static_cast<std::size_t>(a.size()));
}

DenseArray read_array(std::istream& is, const std::string& what) {
  const auto ndim = binio::read_pod<std::int64_t>(is, what);
  if (ndim < 1 || ndim > 8) throw DataError("implausible rank in " + what);
  std::vector<std::int64_t> shape;
  for (std::int64_t i = 0; i < ndim; ++i)
    shape.push_back(binio::read_pod<std::int64_t>(is, what));
  DenseArray a(shape);
  binio::read_doubles(is, a.data(), static_cast<std::size_t>(a.size()), what);
  return a;
}

void write_store(std::ostream& os, const ParameterStore& store) {
  binio::write_pod<std::uint64_t>(os, store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const ParamEntry& e = store.entry(i);
    binio::write_string(os, e.name);
    binio::write_pod<std::uint8_t>(os, e.trainable ? 1 : 0);
    binio::write_pod<std::uint8_t>(os, e.sn_u.has_value() ? 1 : 0);
    write_array(os, e.value);
    if (e.sn_u.has_value()) write_array(os, *e.sn_u);
  }
}

ParameterStore read_store(std::istream& is, const std::string& what) {
  ParameterStore store;
  const auto n = binio::read_pod<std::uint64_t>(is, what);
  if (n > (1ULL << 20)) throw DataError("implausible entry count in " + what);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string name = binio::read_string(is, what);
    const auto trainable = binio::read_pod<std::uint8_t>(is, what);
    const auto has_sn = binio::read_pod<std::uint8_t>(is, what);
    DenseArray value = read_array(is, what + "/" + name);
    ParamEntry& e = store.add(name, std::move(value), has_sn != 0);
    e.trainable = trainable != 0;
    if (has_sn != 0) *e.sn_u = read_array(is, what + "/" + name + "/u");
  }
  return store;
}

void write_predictor_spec(std::ostream& os, const PredictorSpec& s) {
  binio::write_pod<std::int32_t>(os, s.feature_dim);
  binio::write_pod<std::uint64_t>(os, s.hidden_dims.size());
  for (int h : s.hidden_dims) binio::write_pod<std::int32_t>(os, h);
  binio::write_pod<std::int32_t>(os, s.n_classes);
  binio::write_pod<std::uint8_t>(os, s.use_demographics ? 1 : 0);
  binio::write_pod<std::int32_t>(os, s.d_embed_dim);
  binio::write_pod<std::int32_t>(os, s.n_strata);
  binio::write_pod<std::uint8_t>(os, s.multi_label ? 1 : 0);
  binio::write_pod<double>(os, s.leaky_slope);
  binio::write_pod<std::int32_t>(os, s.frozen_projection_dim);
}

PredictorSpec read_predictor_spec(std::istream& is) {
  const std::string what = "predictor spec";
  PredictorSpec s;
  s.feature_dim = binio::read_pod<std::int32_t>(is, what);
  const auto n = binio::read_pod<std::uint64_t>(is, what);
  if (n > 64) throw DataError("implausible hidden layer count");
  s.hidden_dims.clear();
  for (std::uint64_t i = 0; i < n; ++i)
    s.hidden_dims.push_back(binio::read_pod<std::int32_t>(is, what));
  s.n_classes = binio::read_pod<std::int32_t>(is, what);
  s.use_demographics = binio::read_pod<std::uint8_t>(is, what) != 0;
  s.d_embed_dim = binio::read_pod<std::int32_t>(is, what);
  s.n_strata = binio::read_pod<std::int32_t>(is, what);
  s.multi_label = binio::read_pod<std::uint8_t>(is, what) != 0;
  s.leaky_slope = binio::read_pod<double>(is, what);
  s.frozen_projection_dim = binio::read_pod<std::int32_t>(is, what);
  return s;
}

void write_critic_spec(std::ostream& os, const CriticSpec& s) {
  binio::write_pod<std::int32_t>(os, s.n_sites);
  binio::write_pod<std::int32_t>(os, s.n_strata);
  binio::write_pod<std::int32_t>(os, s.z_embed_dim);
  binio::write_pod<std::int32_t>(os, s.d_embed_dim);
  binio::write_pod<std::int32_t>(os, s.hidden_dim);
  binio::write_pod<std::int32_t>(os, s.n_layers);
  binio::write_pod<std::int32_t>(os, s.output_dim);
  binio::write_pod<double>(os, s.leaky_slope);
}

CriticSpec read_critic_spec(std::istream& is) {
  const std::string what = "critic spec";
  CriticSpec s;
  s.n_sites = binio::read_pod<std::int32_t>(is, what);
  s.n_strata = binio::read_pod<std::int32_t>(is, what);
  s.z_embed_dim = binio::read_pod<std::int32_t>(is, what);
  s.d_embed_dim = binio::read_pod<std::int32_t>(is, what);
  s.hidden_dim = binio::read_pod<std::int32_t>(is, what);
  s.n_layers = binio::read_pod<std::int32_t>(is, what);
  s.output_dim = binio::read_pod<std::int32_t>(is, what);
  s.leaky_slope = binio::read_pod<double>(is, what);
  return s;
}

void write_train_config(std::ostream& os, const TrainConfig& c) {
  binio::write_pod<double>(os, c.lambda);
  binio::write_pod<double>(os, c.beta);
  binio::write_pod<std::int32_t>(os, c.n_critic);
  binio::write_pod<std::int64_t>(os, c.batch_size);
  binio::write_pod<double>(os, c.lr_predictor);
  binio::write_pod<double>(os, c.lr_critic);
  binio::write_pod<double>(os, c.weight_decay);
  binio::write_pod<double>(os, c.momentum_ema);
  binio::write_pod<std::int64_t>(os, c.max_steps);
  binio::write_pod<std::int64_t>(os, c.eval_every);
  binio::write_pod<std::int32_t>(os, c.patience);
  binio::write_pod<std::uint64_t>(os, c.seed);
  binio::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(c.ablation));
  binio::write_pod<std::uint64_t>(os, c.lambda_grid.size());
  for (double l : c.lambda_grid) binio::write_pod<double>(os, l);
  binio::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(c.schedule));
  write_predictor_spec(os, c.predictor);
  write_critic_spec(os, c.critic);
}

TrainConfig read_train_config(std::istream& is) {
  const std::string what = "train config";
  TrainConfig c;
  c.lambda = binio::read_pod<double>(is, what);
  c.beta = binio::read_pod<double>(is, what);
  c.n_critic = binio::read_pod<std::int32_t>(is, what);
  c.batch_size = binio::read_pod<std::int64_t>(is, what);
  c.lr_predictor = binio::read_pod<double>(is, what);
  c.lr_critic = binio::read_pod<double>(is, what);
  c.weight_decay = binio::read_pod<double>(is, what);
  c.momentum_ema = binio::read_pod<double>(is, what);
  c.max_steps = binio::read_pod<std::int64_t>(is, what);
  c.eval_every = binio::read_pod<std::int64_t>(is, what);
  c.patience = binio::read_pod<std::int32_t>(is, what);
  c.seed = binio::read_pod<std::uint64_t>(is, what);
  const auto abl = binio::read_pod<std::uint8_t>(is, what);
  if (abl > 3) throw DataError("invalid ablation code");
  c.ablation = static_cast<Ablation>(abl);
  const auto ng = binio::read_pod<std::uint64_t>(is, what);
  if (ng > 256) throw DataError("implausible lambda grid size");
  c.lambda_grid.clear();
  for (std::uint64_t i = 0; i < ng; ++i)
    c.lambda_grid.push_back(binio::read_pod<double>(is, what));
  const auto sched = binio::read_pod<std::uint8_t>(is, what);
  if (sched > 1) throw DataError("invalid schedule code");
  c.schedule = static_cast<LrSchedule>(sched);
  c.predictor = read_predictor_spec(is);
  c.critic = read_critic_spec(is);
  return c;
}

}  // namespace

bool Checkpoint::bitwise_equal(const Checkpoint& other) const {
  return step == other.step && best_metric == other.best_metric &&
         predictor.bitwise_equal(other.predictor) &&
         critic.bitwise_equal(other.critic) &&
         moments.bitwise_equal(other.moments);
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os = binio::open_out(path);
  os.write(kMagic, sizeof(kMagic));
  binio::write_pod<std::uint16_t>(os, kVersion);
  write_train_config(os, ckpt.config);
  write_store(os, ckpt.predictor);
  write_store(os, ckpt.critic);
  binio::write_pod<double>(os, ckpt.moments.momentum);
  write_array(os, ckpt.moments.mu);
  binio::write_pod<std::uint64_t>(os, ckpt.moments.initialized.size());
  for (std::uint8_t b : ckpt.moments.initialized)
    binio::write_pod<std::uint8_t>(os, b);
  binio::write_pod<std::int64_t>(os, ckpt.step);
  binio::write_pod<double>(os, ckpt.best_metric);
  if (!os) throw DataError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is = binio::open_in(path);
  char magic[4];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw DataError("not a checkpoint file: " + path);
  const auto version = binio::read_pod<std::uint16_t>(is, "version");
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version));
  Checkpoint ckpt;
  ckpt.config = read_train_config(is);
  ckpt.predictor = read_store(is, "predictor");
  ckpt.critic = read_store(is, "critic");
  ckpt.moments.momentum = binio::read_pod<double>(is, "moments");
  ckpt.moments.mu = read_array(is, "moments/mu");
  const auto k = binio::read_pod<std::uint64_t>(is, "moments");
  if (k != static_cast<std::uint64_t>(ckpt.moments.mu.rows()))
    throw DataError("moment state flag count mismatch");
  ckpt.moments.initialized.clear();
  for (std::uint64_t i = 0; i < k; ++i)
    ckpt.moments.initialized.push_back(
        binio::read_pod<std::uint8_t>(is, "moments"));
  ckpt.step = binio::read_pod<std::int64_t>(is, "step");
  ckpt.best_metric = binio::read_pod<double>(is, "metric");
  return ckpt;
}

}  // namespace civdg
