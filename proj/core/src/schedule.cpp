#include "asmmd/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "asmmd/errors.hpp"

namespace asmmd {

Ablation ablation_from_string(const std::string& name) {
  if (name == "full" || name == "asmmd") return Ablation::full;
  if (name == "equal_weights") return Ablation::equal_weights;
  if (name == "fixed_weights") return Ablation::fixed_weights;
  if (name == "no_mmd") return Ablation::no_mmd;
  if (name == "no_splitbn") return Ablation::no_splitbn;
  throw ConfigError("unknown ablation '" + name + "'");
}

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::equal_weights: return "equal_weights";
    case Ablation::fixed_weights: return "fixed_weights";
    case Ablation::no_mmd: return "no_mmd";
    case Ablation::no_splitbn: return "no_splitbn";
  }
  return "full";
}

void TrainPlan::validate() const {
  if (warmup_epochs < 1) throw ConfigError("TrainPlan: W must be >= 1");
  if (max_epochs < 1) throw ConfigError("TrainPlan: E must be >= 1");
  if (!(clip_lo >= 1.0) || !(clip_hi >= clip_lo))
    throw ConfigError("TrainPlan: need 1 <= clip_lo <= clip_hi");
  if (n_source < 1 || n_target < 1)
    throw ConfigError("TrainPlan: effective trial counts must be >= 1");
  if (lambda0 < 0.0) throw ConfigError("TrainPlan: lambda0 must be >= 0");
  if (label_smoothing < 0.0 || label_smoothing >= 0.5)
    throw ConfigError("TrainPlan: label smoothing must be in [0, 0.5)");
}

EpochWeights weights_for_epoch(const TrainPlan& plan, std::int64_t e) {
  plan.validate();
  if (e < 1)
    throw ValueError("weights_for_epoch: epoch index starts at 1, got " +
                     std::to_string(e));
  if (e > plan.max_epochs)
    throw ValueError("weights_for_epoch: epoch " + std::to_string(e) +
                     " exceeds E=" + std::to_string(plan.max_epochs));
  const double alpha = std::min(
      1.0, static_cast<double>(e) / static_cast<double>(plan.warmup_epochs));
  const double ratio = static_cast<double>(plan.n_source) /
                       static_cast<double>(plan.n_target);
  const double w_t0 = std::sqrt(ratio);
  const double w_clip = std::clamp(w_t0, plan.clip_lo, plan.clip_hi);

  EpochWeights w{};
  w.alpha = alpha;
  w.w_s = 1.0;
  switch (plan.ablation) {
    case Ablation::equal_weights:
      w.w_t = 1.0;
      break;
    case Ablation::fixed_weights:
      w.w_t = w_clip;
      break;
    default:
      w.w_t = 1.0 + alpha * (w_clip - 1.0);
      break;
  }
  w.lambda_mmd = plan.ablation == Ablation::no_mmd ? 0.0 : alpha * plan.lambda0;
  return w;
}

}  // namespace asmmd
