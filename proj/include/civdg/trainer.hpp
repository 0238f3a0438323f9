#pragma once

#include <cstdint>
#include <vector>

#include "civdg/checkpoint.hpp"
#include "civdg/metrics.hpp"
#include "civdg/rng.hpp"
#include "civdg/scm.hpp"

namespace civdg {

struct Batch {
  DenseArray x;
  DenseArray y;
  std::vector<int> z;
  std::vector<int> d;
  std::int64_t n() const { return static_cast<std::int64_t>(z.size()); }
};

// Seed streams used by one fit; exposed so external replays can reproduce
// the exact trajectory.
std::uint64_t predictor_init_seed(const TrainConfig& cfg);
std::uint64_t critic_init_seed(const TrainConfig& cfg);
std::uint64_t data_stream_seed(const TrainConfig& cfg);
std::uint64_t perm_stream_seed(const TrainConfig& cfg);

// Epoch-wise shuffled minibatches.  A partial tail is dropped and the next
// epoch reshuffles; batch_size caps at the split size.
class BatchStream {
 public:
  BatchStream(const DatasetSplit& split, std::int64_t batch_size,
              std::uint64_t seed);
  Batch next();
  std::int64_t epoch() const { return epoch_; }

 private:
  void reshuffle();

  const DatasetSplit* split_;
  std::int64_t batch_size_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::int64_t epoch_ = 0;
};

// Alternating minimax state: n_critic ascent steps per predictor descent
// step.  The ablation switch reroutes ids before any component sees them:
// no_civ remaps every stratum to 0, random_z feeds the critic a seeded
// permutation of the batch's sites, erm drops the moment term from the
// predictor loss (the critic still trains but cannot influence it).
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  // One ascent step on the critic; returns L_GMM.  Predictor parameters and
  // optimizer state are untouched.
  double critic_step(const Batch& batch);
  // One descent step on the predictor; returns L_task + lambda * L_GMM.
  // Critic parameters, critic power-iteration vectors and the running
  // moment means are untouched; cold strata fall back to their batch mean.
  double predictor_step(const Batch& batch);

  DenseArray predict_probs(const DenseArray& x,
                           const std::vector<int>& d) const;
  Checkpoint snapshot(double best_metric) const;

  const TrainConfig& config() const { return cfg_; }
  const Predictor& predictor() const { return predictor_; }
  Predictor& predictor() { return predictor_; }
  const Critic& critic() const { return critic_; }
  Critic& critic() { return critic_; }
  const MomentState& moments() const { return moments_; }

  std::int64_t critic_updates() const { return critic_updates_; }
  std::int64_t predictor_updates() const { return predictor_updates_; }
  std::int64_t cycle() const { return cycle_; }

  double last_l_task() const { return last_l_task_; }
  double last_l_gmm() const { return last_l_gmm_; }
  double last_m_frob() const { return last_m_frob_; }
  // L2 norm over the initialized rows of the running means.
  double mu_norm() const;

 private:
  std::vector<int> effective_d(const std::vector<int>& d) const;
  std::vector<int> critic_sites(const std::vector<int>& z);
  void check_batch(const Batch& batch) const;

  TrainConfig cfg_;
  Predictor predictor_;
  Critic critic_;
  MomentState moments_;
  OptimizerState opt_predictor_;
  OptimizerState opt_critic_;
  Rng perm_rng_;
  std::int64_t critic_updates_ = 0;
  std::int64_t predictor_updates_ = 0;
  std::int64_t cycle_ = 0;
  double last_l_task_ = 0.0;
  double last_l_gmm_ = 0.0;
  double last_m_frob_ = 0.0;
};

struct FitResult {
  Checkpoint best;
  TrainHistory history;
};

// Alternating optimization with source-validation model selection.  Either
// split carrying the ood role is a contract violation.
FitResult fit(const DatasetSplit& train, const DatasetSplit& source_val,
              const TrainConfig& cfg);

struct SweepRow {
  double lambda = 0.0;
  double val_metric = 0.0;
  double ood_metric = 0.0;
  bool selected = false;
};

// One fit per grid entry under a derived seed.  Selection marks the best
// VALIDATION metric; the ood column is reported for analysis only.
std::vector<SweepRow> lambda_sweep(const DatasetSplit& train,
                                   const DatasetSplit& source_val,
                                   const DatasetSplit& ood_test,
                                   const TrainConfig& cfg, int n_workers = 1);
std::string sweep_delimited(const std::vector<SweepRow>& rows);

// Checkpoint inference; applies the stored ablation's id remap.
DenseArray checkpoint_probs(const Checkpoint& ckpt, const DenseArray& x,
                            const std::vector<int>& d);
PredictionLog evaluate_checkpoint(const Checkpoint& ckpt,
                                  const DatasetSplit& split);

}  // namespace civdg
