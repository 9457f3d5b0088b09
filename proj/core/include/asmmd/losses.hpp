#pragma once

#include <vector>

#include "asmmd/autodiff.hpp"
#include "asmmd/schedule.hpp"

namespace asmmd {

/// Label-smoothed cross-entropy, averaged over the batch. logits is
/// (B, C); the smoothed target is (1 - eps) * onehot + eps / C.
Value cross_entropy(const Value& logits, const std::vector<std::int64_t>& labels,
                    double smoothing);

/// w_S * CE(z_S, y_S) + w_T * CE(z_T, y_T) + lambda * alignment_penalty,
/// with both CE terms smoothed by `smoothing`. The alignment term is
/// omitted from the graph entirely when lambda is 0, so ablated objectives
/// reduce exactly to the weighted CE sum.
Value total_loss(const Value& z_s, const std::vector<std::int64_t>& y_s,
                 const Value& z_t, const std::vector<std::int64_t>& y_t,
                 const EpochWeights& weights, double smoothing,
                 bool clamp_mmd = false);

}  // namespace asmmd
