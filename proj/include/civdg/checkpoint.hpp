#pragma once

#include <string>

#include "civdg/moments.hpp"
#include "civdg/params.hpp"
#include "civdg/train_config.hpp"

namespace civdg {

// Full training snapshot: enough to resume inference exactly, including the
// ablation switch (no_civ inference remaps every stratum id to 0).
struct Checkpoint {
  TrainConfig config;
  ParameterStore predictor;
  ParameterStore critic;
  MomentState moments;
  std::int64_t step = 0;
  double best_metric = 0.0;

  bool bitwise_equal(const Checkpoint& other) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace civdg
