#include "civdg/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

#include "civdg/errors.hpp"
#include "civdg/kernels/kernels.hpp"
#include "civdg/layers.hpp"
#include "civdg/moments.hpp"

namespace civdg {

namespace {

constexpr std::uint64_t kPredTag = 0x70726564;    // "pred"
constexpr std::uint64_t kCriticTag = 0x63726974;  // "crit"
constexpr std::uint64_t kDataTag = 0x64617461;    // "data"
constexpr std::uint64_t kPermTag = 0x7065726d;    // "perm"
constexpr std::uint64_t kSweepTag = 0x73776565;   // "swee"

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::uint64_t predictor_init_seed(const TrainConfig& cfg) {
  return derive_seed(cfg.seed, kPredTag);
}
std::uint64_t critic_init_seed(const TrainConfig& cfg) {
  return derive_seed(cfg.seed, kCriticTag);
}
std::uint64_t data_stream_seed(const TrainConfig& cfg) {
  return derive_seed(cfg.seed, kDataTag);
}
std::uint64_t perm_stream_seed(const TrainConfig& cfg) {
  return derive_seed(cfg.seed, kPermTag);
}

BatchStream::BatchStream(const DatasetSplit& split, std::int64_t batch_size,
                         std::uint64_t seed)
    : split_(&split), batch_size_(batch_size), rng_(seed) {
  if (split.role == SplitRole::kOodTest)
    throw ContractError("shifted test split streamed into training");
  if (split.n() == 0) throw ValidationError("batch stream over empty split");
  if (batch_size < 1)
    throw ValidationError("batch_size must be positive, got " +
                          std::to_string(batch_size));
  batch_size_ = std::min<std::int64_t>(batch_size_, split.n());
  reshuffle();
}

void BatchStream::reshuffle() {
  order_ = rng_.permutation(static_cast<std::size_t>(split_->n()));
  cursor_ = 0;
}

Batch BatchStream::next() {
  if (cursor_ + static_cast<std::size_t>(batch_size_) > order_.size()) {
    ++epoch_;
    reshuffle();
  }
  const std::int64_t b = batch_size_;
  const std::int64_t p = split_->x.cols();
  const std::int64_t c = split_->y.cols();
  Batch batch;
  batch.x = DenseArray({b, p});
  batch.y = DenseArray({b, c});
  batch.z.resize(static_cast<std::size_t>(b));
  batch.d.resize(static_cast<std::size_t>(b));
  for (std::int64_t i = 0; i < b; ++i) {
    const std::int64_t src =
        static_cast<std::int64_t>(order_[cursor_ + static_cast<std::size_t>(i)]);
    std::memcpy(batch.x.row_ptr(i), split_->x.row_ptr(src),
                static_cast<std::size_t>(p) * sizeof(double));
    std::memcpy(batch.y.row_ptr(i), split_->y.row_ptr(src),
                static_cast<std::size_t>(c) * sizeof(double));
    batch.z[static_cast<std::size_t>(i)] = split_->z[static_cast<std::size_t>(src)];
    batch.d[static_cast<std::size_t>(i)] = split_->d[static_cast<std::size_t>(src)];
  }
  cursor_ += static_cast<std::size_t>(b);
  return batch;
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      predictor_(cfg.predictor, predictor_init_seed(cfg)),
      critic_(cfg.critic, critic_init_seed(cfg)),
      moments_(cfg.critic.n_strata, cfg.critic.output_dim, cfg.momentum_ema),
      opt_predictor_(OptimizerState::for_store(predictor_.params(),
                                               cfg.lr_predictor,
                                               cfg.weight_decay)),
      opt_critic_(OptimizerState::for_store(critic_.params(), cfg.lr_critic,
                                            cfg.beta * cfg.weight_decay)),
      perm_rng_(perm_stream_seed(cfg)) {
  // The critic chases a moving objective; a long second-moment memory keeps
  // its step sizes calibrated to stale gradient magnitudes and freezes it
  // after transient spikes.
  opt_critic_.beta2 = 0.9;
}

void Trainer::check_batch(const Batch& batch) const {
  const std::int64_t b = batch.n();
  if (b == 0) throw ValidationError("empty batch");
  if (batch.x.rows() != b || batch.y.rows() != b ||
      static_cast<std::int64_t>(batch.d.size()) != b)
    throw DimensionError("batch row counts disagree");
  if (batch.x.cols() != cfg_.predictor.feature_dim)
    throw DimensionError("batch feature dim " + std::to_string(batch.x.cols()) +
                         " != " + std::to_string(cfg_.predictor.feature_dim));
  if (batch.y.cols() != cfg_.predictor.n_classes)
    throw DimensionError("batch label dim " + std::to_string(batch.y.cols()) +
                         " != " + std::to_string(cfg_.predictor.n_classes));
}

std::vector<int> Trainer::effective_d(const std::vector<int>& d) const {
  if (cfg_.ablation != Ablation::kNoCiv) return d;
  return std::vector<int>(d.size(), 0);
}

std::vector<int> Trainer::critic_sites(const std::vector<int>& z) {
  if (cfg_.ablation != Ablation::kRandomZ) return z;
  const std::vector<std::size_t> perm = perm_rng_.permutation(z.size());
  std::vector<int> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[perm[i]];
  return out;
}

double Trainer::critic_step(const Batch& batch) {
  check_batch(batch);
  const std::vector<int> d_eff = effective_d(batch.d);
  const std::vector<int> z_eff = critic_sites(batch.z);

  const DenseArray logits = predictor_.forward(batch.x, d_eff);
  const DenseArray probs =
      probs_from_logits(logits, cfg_.predictor.multi_label);
  const DenseArray e = compute_residuals(batch.y, probs);

  Critic::Cache cache;
  const DenseArray c = critic_.forward(z_eff, d_eff, true, &cache);
  const DenseArray centered = center_instruments(c, d_eff, moments_, true);
  const DenseArray m_hat = moment_matrix(e, centered);
  const double l_gmm = gmm_loss(m_hat);
  if (!std::isfinite(l_gmm))
    throw NumericalError("non-finite critic objective at cycle " +
                         std::to_string(cycle_));

  const DenseArray g_c = moment_grad_to_centered(gmm_loss_backward(m_hat), e);
  critic_.params().zero_grads();
  critic_.backward(cache, g_c);
  opt_critic_.lr = cfg_.lr_critic *
                   schedule_factor(cfg_.schedule, cycle_, cfg_.max_steps);
  adamw_step(critic_.params(), opt_critic_, /*maximize=*/true);
  ++critic_updates_;
  return l_gmm;
}

double Trainer::predictor_step(const Batch& batch) {
  check_batch(batch);
  const std::vector<int> d_eff = effective_d(batch.d);

  Predictor::Cache cache;
  const DenseArray logits = predictor_.forward(batch.x, d_eff, &cache);
  const LossResult task = cfg_.predictor.multi_label
                              ? sigmoid_bce(logits, batch.y)
                              : softmax_ce(logits, batch.y);

  const std::int64_t b = batch.n();
  const std::int64_t n_cls = cfg_.predictor.n_classes;
  const double denom = cfg_.predictor.multi_label
                           ? static_cast<double>(b * n_cls)
                           : static_cast<double>(b);
  DenseArray g_logits({b, n_cls});
  for (std::int64_t i = 0; i < b * n_cls; ++i)
    g_logits.data()[i] = (task.probs.data()[i] - batch.y.data()[i]) / denom;

  // Moment diagnostics are recorded for every ablation; only an effective
  // lambda > 0 lets them touch the gradient.
  const std::vector<int> z_eff = critic_sites(batch.z);
  const DenseArray c = critic_.forward(z_eff, d_eff, false);
  DenseArray centered;
  try {
    centered = center_instruments(c, d_eff, moments_, false);
  } catch (const ColdStratumError&) {
    // Stratum unseen by any critic step yet: center against a scratch copy
    // so the real running means stay untouched by the predictor path.
    MomentState scratch = moments_;
    centered = center_instruments(c, d_eff, scratch, true);
  }
  const DenseArray e = compute_residuals(batch.y, task.probs);
  const DenseArray m_hat = moment_matrix(e, centered);
  const double l_gmm = gmm_loss(m_hat);

  const double lambda = cfg_.effective_lambda();
  if (lambda > 0.0) {
    const DenseArray g_e =
        moment_grad_to_residuals(gmm_loss_backward(m_hat), centered);
    const DenseArray g_from_gmm =
        residual_grad_to_logits(task.probs, g_e, cfg_.predictor.multi_label);
    kernels::active().axpy(static_cast<std::size_t>(g_logits.size()), lambda,
                           g_from_gmm.data(), g_logits.data());
  }

  const double l_theta = task.loss + lambda * l_gmm;
  if (!std::isfinite(l_theta))
    throw NumericalError("non-finite predictor objective at cycle " +
                         std::to_string(cycle_));

  predictor_.params().zero_grads();
  predictor_.backward(cache, g_logits);
  opt_predictor_.lr = cfg_.lr_predictor *
                      schedule_factor(cfg_.schedule, cycle_, cfg_.max_steps);
  adamw_step(predictor_.params(), opt_predictor_, /*maximize=*/false);

  last_l_task_ = task.loss;
  last_l_gmm_ = l_gmm;
  last_m_frob_ = std::sqrt(l_gmm);
  ++predictor_updates_;
  ++cycle_;
  return l_theta;
}

DenseArray Trainer::predict_probs(const DenseArray& x,
                                  const std::vector<int>& d) const {
  const std::vector<int> d_eff = effective_d(d);
  return probs_from_logits(predictor_.forward(x, d_eff),
                           cfg_.predictor.multi_label);
}

Checkpoint Trainer::snapshot(double best_metric) const {
  Checkpoint ckpt;
  ckpt.config = cfg_;
  ckpt.predictor = predictor_.params();
  ckpt.critic = critic_.params();
  ckpt.moments = moments_;
  ckpt.step = cycle_;
  ckpt.best_metric = best_metric;
  return ckpt;
}

double Trainer::mu_norm() const {
  double acc = 0.0;
  for (std::int64_t k = 0; k < moments_.n_strata(); ++k) {
    if (!moments_.initialized[static_cast<std::size_t>(k)]) continue;
    acc += kernels::active().sumsq(static_cast<std::size_t>(moments_.dim()),
                                   moments_.mu.row_ptr(k));
  }
  return std::sqrt(acc);
}

namespace {

void check_split_against(const TrainConfig& cfg, const DatasetSplit& split,
                         const char* what) {
  const std::string tag(what);
  if (split.n() == 0) throw ValidationError(tag + " split is empty");
  if (split.x.cols() != cfg.predictor.feature_dim)
    throw ConfigError(tag + " feature dim " + std::to_string(split.x.cols()) +
                      " != configured " +
                      std::to_string(cfg.predictor.feature_dim));
  if (split.y.cols() != cfg.predictor.n_classes)
    throw ConfigError(tag + " label dim " + std::to_string(split.y.cols()) +
                      " != configured " +
                      std::to_string(cfg.predictor.n_classes));
  if (split.provenance.multi_label != cfg.predictor.multi_label)
    throw ConfigError(tag + " task mode disagrees with the configured head");
  for (std::size_t i = 0; i < split.z.size(); ++i) {
    if (split.z[i] < 0 || split.z[i] >= cfg.critic.n_sites)
      throw ConfigError(tag + " site id " + std::to_string(split.z[i]) +
                        " outside configured range");
    if (split.d[i] < 0 || split.d[i] >= cfg.predictor.n_strata)
      throw ConfigError(tag + " stratum id " + std::to_string(split.d[i]) +
                        " outside configured range");
  }
}

}  // namespace

FitResult fit(const DatasetSplit& train, const DatasetSplit& source_val,
              const TrainConfig& cfg) {
  cfg.validate();
  if (train.role == SplitRole::kOodTest || source_val.role == SplitRole::kOodTest)
    throw ContractError("shifted test split passed into training");
  check_split_against(cfg, train, "train");
  check_split_against(cfg, source_val, "validation");

  Trainer trainer(cfg);
  BatchStream stream(train, cfg.batch_size, data_stream_seed(cfg));

  FitResult result;
  double best = -std::numeric_limits<double>::infinity();
  bool have_best = false;
  int stale = 0;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::int64_t cycle = 0; cycle < cfg.max_steps; ++cycle) {
    for (int i = 0; i < cfg.n_critic; ++i) trainer.critic_step(stream.next());
    trainer.predictor_step(stream.next());

    const double wall_ms =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - t0)
            .count();
    result.history.steps.push_back({cycle + 1, trainer.last_l_task(),
                                    trainer.last_l_gmm(), trainer.last_m_frob(),
                                    trainer.mu_norm(), wall_ms});

    const bool last_cycle = cycle + 1 == cfg.max_steps;
    if ((cycle + 1) % cfg.eval_every == 0 || last_cycle) {
      const DenseArray probs =
          trainer.predict_probs(source_val.x, source_val.d);
      const double metric = validation_metric(build_log(source_val, probs));
      const bool improved = !have_best || metric > best;
      result.history.evals.push_back({cycle + 1, metric, improved});
      if (improved) {
        best = metric;
        result.best = trainer.snapshot(metric);
        have_best = true;
        stale = 0;
      } else if (++stale >= cfg.patience) {
        break;
      }
    }
  }
  return result;
}

std::vector<SweepRow> lambda_sweep(const DatasetSplit& train,
                                   const DatasetSplit& source_val,
                                   const DatasetSplit& ood_test,
                                   const TrainConfig& cfg, int n_workers) {
  cfg.validate();
  if (n_workers < 1)
    throw ConfigError("n_workers must be positive, got " +
                      std::to_string(n_workers));
  const std::size_t n = cfg.lambda_grid.size();
  std::vector<SweepRow> rows(n);

  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        TrainConfig run = cfg;
        run.lambda = cfg.lambda_grid[i];
        run.seed = derive_seed(cfg.seed, kSweepTag, static_cast<std::uint64_t>(i));
        const FitResult r = fit(train, source_val, run);
        const PredictionLog ood_log = evaluate_checkpoint(r.best, ood_test);
        rows[i] = {run.lambda, r.best.best_metric,
                   validation_metric(ood_log), false};
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };

  if (n_workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    const int k = std::min<int>(n_workers, static_cast<int>(n));
    pool.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  std::size_t sel = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (rows[i].val_metric > rows[sel].val_metric) sel = i;
  rows[sel].selected = true;
  return rows;
}

std::string sweep_delimited(const std::vector<SweepRow>& rows) {
  std::string out = "lambda,val_metric,ood_metric,selected\n";
  for (const SweepRow& r : rows) {
    out += fmt_double(r.lambda);
    out += ',';
    out += fmt_double(r.val_metric);
    out += ',';
    out += fmt_double(r.ood_metric);
    out += ',';
    out += r.selected ? '1' : '0';
    out += '\n';
  }
  return out;
}

DenseArray checkpoint_probs(const Checkpoint& ckpt, const DenseArray& x,
                            const std::vector<int>& d) {
  Predictor predictor(ckpt.config.predictor, 0);
  predictor.params() = ckpt.predictor;
  std::vector<int> d_eff = d;
  if (ckpt.config.ablation == Ablation::kNoCiv)
    std::fill(d_eff.begin(), d_eff.end(), 0);
  return probs_from_logits(predictor.forward(x, d_eff),
                           ckpt.config.predictor.multi_label);
}

PredictionLog evaluate_checkpoint(const Checkpoint& ckpt,
                                  const DatasetSplit& split) {
  return build_log(split, checkpoint_probs(ckpt, split.x, split.d));
}

}  // namespace civdg
