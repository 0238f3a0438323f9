#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "civdg/models.hpp"

namespace civdg {

enum class Ablation { kFullCiv, kNoCiv, kRandomZ, kErm };
const char* ablation_name(Ablation a);
Ablation ablation_from_name(const std::string& name);

enum class LrSchedule { kConstant, kCosineWarmup };
const char* schedule_name(LrSchedule s);
LrSchedule schedule_from_name(const std::string& name);

// Learning-rate multiplier at a given optimization cycle.  The cosine
// option ramps linearly over the first 5% of max_steps and then decays
// 1 -> 0 along a half cosine.
double schedule_factor(LrSchedule schedule, std::int64_t cycle,
                       std::int64_t max_steps);

struct TrainConfig {
  double lambda = 1.0;
  double beta = 1.0;
  int n_critic = 5;
  std::int64_t batch_size = 128;
  double lr_predictor = 1e-3;
  double lr_critic = 1e-3;
  double weight_decay = 1e-4;
  double momentum_ema = 0.9;
  std::int64_t max_steps = 400;  // minimax cycles
  std::int64_t eval_every = 25;
  int patience = 5;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::kFullCiv;
  std::vector<double> lambda_grid = {0.1, 1.0, 10.0};
  LrSchedule schedule = LrSchedule::kConstant;

  PredictorSpec predictor;
  CriticSpec critic;

  void validate() const;
  // The erm ablation trains the task loss alone.
  double effective_lambda() const {
    return ablation == Ablation::kErm ? 0.0 : lambda;
  }
};

struct StepRecord {
  std::int64_t step = 0;
  double l_task = 0.0;
  double l_gmm = 0.0;
  double m_frob = 0.0;
  double mu_norm = 0.0;
  double wall_ms = 0.0;
};

struct EvalRecord {
  std::int64_t step = 0;
  double metric = 0.0;
  bool improved = false;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;

  // learning content only; wall-clock is expected to differ between runs
  bool content_equal(const TrainHistory& other) const;
};

// "step,l_task,l_gmm,m_frob,mu_norm,wall_ms" rows, then
// "eval,step,metric,improved" rows.
std::string history_delimited(const TrainHistory& history);

}  // namespace civdg
