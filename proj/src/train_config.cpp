#include "civdg/train_config.hpp"

#include <cmath>
#include <cstdio>

#include "civdg/errors.hpp"

namespace civdg {

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kFullCiv: return "full_civ";
    case Ablation::kNoCiv: return "no_civ";
    case Ablation::kRandomZ: return "random_z";
    case Ablation::kErm: return "erm";
  }
  return "?";
}

Ablation ablation_from_name(const std::string& name) {
  if (name == "full_civ") return Ablation::kFullCiv;
  if (name == "no_civ") return Ablation::kNoCiv;
  if (name == "random_z") return Ablation::kRandomZ;
  if (name == "erm") return Ablation::kErm;
  throw ConfigError("unknown ablation: " + name);
}

const char* schedule_name(LrSchedule s) {
  switch (s) {
    case LrSchedule::kConstant: return "constant";
    case LrSchedule::kCosineWarmup: return "cosine";
  }
  return "?";
}

LrSchedule schedule_from_name(const std::string& name) {
  if (name == "constant") return LrSchedule::kConstant;
  if (name == "cosine") return LrSchedule::kCosineWarmup;
  throw ConfigError("unknown lr schedule: " + name);
}

double schedule_factor(LrSchedule schedule, std::int64_t cycle,
                       std::int64_t max_steps) {
  if (schedule == LrSchedule::kConstant) return 1.0;
  const std::int64_t warmup =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(
                                    std::ceil(0.05 * static_cast<double>(
                                                         max_steps))));
  if (cycle < warmup)
    return static_cast<double>(cycle + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<std::int64_t>(
      1, max_steps - warmup));
  const double t = static_cast<double>(cycle - warmup) / span;
  return 0.5 * (1.0 + std::cos(M_PI * std::min(t, 1.0)));
}

void TrainConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (beta < 0.0) throw ConfigError("beta must be >= 0");
  if (n_critic < 1) throw ConfigError("n_critic must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_predictor > 0.0) || !(lr_critic > 0.0))
    throw ConfigError("learning rates must be > 0");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(momentum_ema >= 0.0 && momentum_ema < 1.0))
    throw ConfigError("momentum_ema must lie in [0, 1)");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (lambda_grid.empty()) throw ConfigError("lambda_grid must be nonempty");
  for (double l : lambda_grid)
    if (l < 0.0) throw ConfigError("lambda_grid entries must be >= 0");
  civdg::validate(predictor);
  civdg::validate(critic);
  if (predictor.n_strata != critic.n_strata)
    throw ConfigError("predictor and critic disagree on stratum count");
  if (predictor.multi_label && predictor.n_classes < 1)
    throw ConfigError("invalid class count");
}

bool TrainHistory::content_equal(const TrainHistory& other) const {
  if (steps.size() != other.steps.size() || evals.size() != other.evals.size())
    return false;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const StepRecord& a = steps[i];
    const StepRecord& b = other.steps[i];
    if (a.step != b.step || a.l_task != b.l_task || a.l_gmm != b.l_gmm ||
        a.m_frob != b.m_frob || a.mu_norm != b.mu_norm)
      return false;
  }
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const EvalRecord& a = evals[i];
    const EvalRecord& b = other.evals[i];
    if (a.step != b.step || a.metric != b.metric || a.improved != b.improved)
      return false;
  }
  return true;
}

std::string history_delimited(const TrainHistory& history) {
  std::string out = "step,l_task,l_gmm,m_frob,mu_norm,wall_ms\n";
  char buf[256];
  for (const StepRecord& r : history.steps) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.3f\n",
                  static_cast<long long>(r.step), r.l_task, r.l_gmm, r.m_frob,
                  r.mu_norm, r.wall_ms);
    out += buf;
  }
  for (const EvalRecord& r : history.evals) {
    std::snprintf(buf, sizeof(buf), "eval,%lld,%.17g,%d\n",
                  static_cast<long long>(r.step), r.metric,
                  r.improved ? 1 : 0);
    out += buf;
  }
  return out;
}

}  // namespace civdg
