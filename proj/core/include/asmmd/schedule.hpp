#pragma once

#include <cstdint>
#include <string>

namespace asmmd {

enum class Ablation { full, equal_weights, fixed_weights, no_mmd, no_splitbn };

Ablation ablation_from_string(const std::string& name);
const char* ablation_name(Ablation a);

struct TrainPlan {
  std::int64_t warmup_epochs = 40;  // W
  std::int64_t max_epochs = 300;    // E
  double lambda0 = 0.4;
  double clip_lo = 1.0;
  double clip_hi = 6.0;
  std::int64_t n_source = 1;  // per-epoch effective trial counts
  std::int64_t n_target = 1;
  double label_smoothing = 0.1;
  Ablation ablation = Ablation::full;

  void validate() const;
};

struct EpochWeights {
  double alpha;
  double w_s;
  double w_t;
  double lambda_mmd;
};

/// Warm-up factor, domain weights and MMD scale for 1-based epoch e:
/// alpha = min(1, e/W), w_T0 = sqrt(N_S/N_T), clipped to [clip_lo, clip_hi],
/// w_T = 1 + alpha (w_T~ - 1), w_S = 1, lambda = alpha * lambda0.
/// Ablations: equal_weights pins w_T = 1; fixed_weights uses the clipped
/// ratio from epoch 1 (no warm-up on the weight); no_mmd zeroes lambda.
EpochWeights weights_for_epoch(const TrainPlan& plan, std::int64_t e);

}  // namespace asmmd
