#pragma once

#include <cstdint>
#include <vector>

#include "asmmd/conformer.hpp"
#include "asmmd/epochs_io.hpp"
#include "asmmd/schedule.hpp"

namespace asmmd {

/// Independent RNG streams per replicate so batch order, augmentation draws
/// and dropout masks never couple.
struct TrainSeeds {
  std::uint64_t shuffle = 1;
  std::uint64_t augment = 2;
  std::uint64_t dropout = 3;
};

struct AugmentSpec {
  std::int64_t jitter_max = 5;
  double noise_std = 0.005;
};

struct TrainerOptions {
  std::int64_t batch_size = 32;
  std::int64_t grad_accum = 1;
  double lr = 0.01;
  double lr_min = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double adamax_eps = 1e-8;
  std::int64_t patience = 50;
  AugmentSpec augment;
  bool clamp_mmd = false;
  /// Record every batch draw so a run can be replayed through
  /// train_baseline's schedule parameter.
  bool record_batches = false;

  void validate() const;
};

struct EpochStats {
  std::int64_t epoch = 0;
  double mean_loss = 0.0;
  double w_t = 1.0;
  double lambda_mmd = 0.0;
  double lr = 0.0;
  double val_accuracy = 0.0;
};

struct BatchDraw {
  Domain domain = Domain::source;
  std::vector<std::int64_t> indices;
};

struct RunRecord {
  std::vector<EpochStats> history;
  /// One entry per optimizer step: the combined loss of that step's window.
  std::vector<double> step_losses;
  std::int64_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::int64_t epochs_run = 0;
  /// Per epoch, the batches in draw order (source/target interleaved for
  /// the paired loop). Filled only when record_batches is set.
  std::vector<std::vector<BatchDraw>> batch_log;
};

/// lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi (e-1)/(E-1))); E < 2 gives
/// lr_max.
double cosine_lr(std::int64_t epoch, std::int64_t max_epochs, double lr_max,
                 double lr_min);

/// Paired-minibatch training: per step, a source batch (full shuffled
/// traversal per epoch) and a target batch (cycled with reshuffling), one
/// combined loss, one backward, one Adamax step. Early stopping on
/// target-val accuracy with best-checkpoint restore.
RunRecord train_asmmd(Model& model, const TrainPlan& plan,
                      const EpochSet& source_train,
                      const EpochSet& target_train,
                      const EpochSet& target_val, const TrainerOptions& opts,
                      const TrainSeeds& seeds);

enum class BaselineKind { target_only, pooled };

/// Plain cross-entropy training on one set with the same optimizer,
/// scheduler, augmentation and early stopping. `schedule` (optional)
/// replays a recorded batch log instead of drawing batches; grad_accum then
/// groups consecutive entries into one update window.
RunRecord train_baseline(BaselineKind kind, Model& model,
                         const TrainPlan& plan, const EpochSet& train_set,
                         const EpochSet& target_val,
                         const TrainerOptions& opts, const TrainSeeds& seeds,
                         const std::vector<std::vector<BatchDraw>>* schedule =
                             nullptr);

struct EvalResult {
  double accuracy = 0.0;
  double auc = 0.0;
  /// Per-trial class-1 margin (logit_1 - logit_0), input order.
  std::vector<double> scores;
};

/// Eval-mode metrics on a set using the stated domain's BN buffers.
/// Argmax ties resolve toward class 0.
EvalResult evaluate(Model& model, const EpochSet& set, Domain domain);

}  // namespace asmmd
