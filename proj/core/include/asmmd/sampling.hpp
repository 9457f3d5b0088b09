#pragma once

#include <cstdint>
#include <vector>

#include "asmmd/epochs_io.hpp"
#include "asmmd/rng.hpp"
#include "asmmd/tensor.hpp"

namespace asmmd {

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Per-channel mean and population std over all trials and samples.
/// Throws NumericError naming the channel when a std vanishes.
ChannelStats zscore_fit(const EpochSet& train);

/// (x - mean) / std per channel, computed in double, stored back as float.
EpochSet zscore_apply(const EpochSet& set, const ChannelStats& stats);

enum class Role { source, target };

struct BudgetSpec {
  std::int64_t oddball;
  std::int64_t standard;
};

/// Protocol budgets: source 40/40, target 5/5 per subject.
BudgetSpec role_budget(Role role);

/// Uniform without-replacement subsample hitting the class budget exactly
/// for every subject present in the set. Trial order of the result follows
/// the input set. Throws ValueError naming the first subject that cannot
/// meet the budget.
EpochSet stratified_budget_sample(const EpochSet& set, BudgetSpec budget,
                                  Rng& rng);
EpochSet stratified_budget_sample(const EpochSet& set, Role role, Rng& rng);

struct SplitSpec {
  std::int64_t k_folds = 5;
  std::vector<std::uint64_t> seeds = {42, 123, 456, 789, 321};
  double val_fraction = 0.2;

  void validate() const;
};

struct CvSplit {
  std::uint64_t seed = 0;
  std::int64_t fold = 0;
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> val;
  std::vector<std::int64_t> test;
};

/// Label-stratified k-fold partition of the pooled trials, repeated once per
/// seed. Within each (seed, fold): test = the fold, the remainder is split
/// stratified into train/val by val_fraction. Index lists are sorted.
/// Deterministic in (labels, spec). Ordered seed-major, then fold.
std::vector<CvSplit> cv_splits(const EpochSet& target, const SplitSpec& spec);

/// In-place temporal jitter and additive Gaussian noise on a (B, C, T) batch.
/// One offset per trial, drawn uniformly from [-jitter_max, +jitter_max],
/// applied to every channel with zero-fill at the vacated edge; noise is
/// i.i.d. per sample. Per trial: offset first, then that trial's noise.
void augment(Tensor& batch, Rng& rng, std::int64_t jitter_max,
             double noise_std);

/// Copies the chosen trials into a (B, C, T) double tensor.
Tensor gather_trials(const EpochSet& set, const std::vector<std::int64_t>& indices);

std::vector<std::int64_t> labels_of(const EpochSet& set,
                                    const std::vector<std::int64_t>& indices);

/// All trial indices 0..n-1 of a set.
std::vector<std::int64_t> all_indices(const EpochSet& set);

/// Naive union of two sets with matching geometry; subject ids are kept
/// verbatim and may collide across domains.
EpochSet concat(const EpochSet& a, const EpochSet& b);

/// Oddball/standard labels from P300-speller event codes: the diagonal codes
/// {11, 22, 33, 44, 55} map to oddball (1), everything else to standard (0).
std::vector<std::uint8_t> labels_from_event_codes(
    const std::vector<std::int64_t>& codes);

}  // namespace asmmd
