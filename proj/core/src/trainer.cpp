#include "asmmd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "asmmd/errors.hpp"
#include "asmmd/losses.hpp"
#include "asmmd/optim.hpp"
#include "asmmd/sampling.hpp"
#include "asmmd/stats.hpp"

namespace asmmd {

void TrainerOptions::validate() const {
  if (batch_size < 1) throw ConfigError("trainer: batch_size must be >= 1");
  if (grad_accum < 1) throw ConfigError("trainer: grad_accum must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("trainer: lr must be positive");
  if (lr_min < 0.0 || lr_min > lr) {
    throw ConfigError("trainer: lr_min must lie in [0, lr]");
  }
  if (patience < 1) throw ConfigError("trainer: patience must be >= 1");
  if (augment.jitter_max < 0) {
    throw ConfigError("trainer: jitter_max must be >= 0");
  }
  if (augment.noise_std < 0.0) {
    throw ConfigError("trainer: augmentation noise_std must be >= 0");
  }
}

double cosine_lr(std::int64_t epoch, std::int64_t max_epochs, double lr_max,
                 double lr_min) {
  if (max_epochs < 2) return lr_max;
  if (epoch < 1 || epoch > max_epochs) {
    throw ValueError("cosine_lr: epoch out of range");
  }
  const double phase = std::numbers::pi *
                       static_cast<double>(epoch - 1) /
                       static_cast<double>(max_epochs - 1);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(phase));
}

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

class TargetCycler {
 public:
  TargetCycler(std::int64_t n, Rng& rng) : n_(n), rng_(rng) { refill(); }

  std::vector<std::int64_t> next(std::int64_t want) {
    std::vector<std::int64_t> out;
    out.reserve(static_cast<std::size_t>(want));
    while (static_cast<std::int64_t>(out.size()) < want) {
      if (pos_ == n_) refill();
      out.push_back(perm_[static_cast<std::size_t>(pos_++)]);
    }
    return out;
  }

 private:
  void refill() {
    perm_ = rng_.permutation(n_);
    pos_ = 0;
  }

  std::int64_t n_;
  Rng& rng_;
  std::vector<std::int64_t> perm_;
  std::int64_t pos_ = 0;
};

std::vector<std::vector<std::int64_t>> chunk(
    const std::vector<std::int64_t>& perm, std::int64_t batch_size) {
  std::vector<std::vector<std::int64_t>> out;
  for (std::size_t i = 0; i < perm.size();
       i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(perm.size(), i + static_cast<std::size_t>(batch_size));
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                     perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

struct StopState {
  bool has_val;
  std::int64_t patience;
  double best_acc = -1.0;
  std::int64_t best_epoch = 0;
  std::int64_t stale = 0;
  Model::Snapshot best_snap;

  bool observe(Model& model, std::int64_t epoch, double val_acc) {
    if (!has_val) {
      best_epoch = epoch;
      return false;
    }
    if (val_acc > best_acc) {
      best_acc = val_acc;
      best_epoch = epoch;
      best_snap = model.snapshot();
      stale = 0;
    } else if (++stale >= patience) {
      return true;
    }
    return false;
  }

  void finish(Model& model) const {
    if (has_val && best_epoch > 0) model.restore(best_snap);
  }
};

// One update per full window: fold the step losses, single backward,
// single Adamax step at the scheduled rate.
class WindowRunner {
 public:
  WindowRunner(Adamax& opt, std::int64_t accum, RunRecord& rec)
      : opt_(opt), accum_(accum), rec_(rec) {}

  void push(Value loss, std::int64_t epoch, double lr) {
    window_.push_back(std::move(loss));
    if (static_cast<std::int64_t>(window_.size()) == accum_) flush(epoch, lr);
  }

  void flush(std::int64_t epoch, double lr) {
    if (window_.empty()) return;
    Value total = window_.front();
    for (std::size_t i = 1; i < window_.size(); ++i) {
      total = add(total, window_[i]);
    }
    const double value = total.val()[0];
    if (!std::isfinite(value)) {
      check_finite(total);
      throw NumericError("trainer: non-finite loss at epoch " +
                         std::to_string(epoch));
    }
    opt_.zero_grad();
    backward(total);
    opt_.step(lr);
    rec_.step_losses.push_back(value);
    epoch_loss_sum_ += value;
    ++epoch_windows_;
    window_.clear();
  }

  double epoch_mean_loss() {
    const double mean =
        epoch_windows_ > 0
            ? epoch_loss_sum_ / static_cast<double>(epoch_windows_)
            : kNan;
    epoch_loss_sum_ = 0.0;
    epoch_windows_ = 0;
    return mean;
  }

 private:
  Adamax& opt_;
  std::int64_t accum_;
  RunRecord& rec_;
  std::vector<Value> window_;
  double epoch_loss_sum_ = 0.0;
  std::int64_t epoch_windows_ = 0;
};

}  // namespace

RunRecord train_asmmd(Model& model, const TrainPlan& plan,
                      const EpochSet& source_train,
                      const EpochSet& target_train,
                      const EpochSet& target_val, const TrainerOptions& opts,
                      const TrainSeeds& seeds) {
  opts.validate();
  source_train.validate();
  target_train.validate();
  target_val.validate();
  if (source_train.n_trials() == 0) {
    throw ValueError("train_asmmd: empty source split");
  }
  if (target_train.n_trials() == 0) {
    throw ValueError("train_asmmd: empty target split");
  }

  TrainPlan p = plan;
  p.n_source = source_train.n_trials();
  p.n_target = target_train.n_trials();
  p.validate();

  Rng shuffle_rng(seeds.shuffle);
  Rng augment_rng(seeds.augment);
  Rng dropout_rng(seeds.dropout);
  Adamax opt(model.parameters(),
             {opts.beta1, opts.beta2, opts.weight_decay, opts.adamax_eps});
  TargetCycler cycler(p.n_target, shuffle_rng);
  const bool has_val = target_val.n_trials() > 0;
  StopState stop{has_val, opts.patience};

  RunRecord rec;
  WindowRunner runner(opt, opts.grad_accum, rec);
  for (std::int64_t epoch = 1; epoch <= p.max_epochs; ++epoch) {
    const EpochWeights w = weights_for_epoch(p, epoch);
    const double lr = cosine_lr(epoch, p.max_epochs, opts.lr, opts.lr_min);
    std::vector<BatchDraw> log;

    for (auto& s_idx : chunk(shuffle_rng.permutation(p.n_source),
                             opts.batch_size)) {
      std::vector<std::int64_t> t_idx = cycler.next(opts.batch_size);
      Tensor xs = gather_trials(source_train, s_idx);
      augment(xs, augment_rng, opts.augment.jitter_max,
              opts.augment.noise_std);
      Tensor xt = gather_trials(target_train, t_idx);
      augment(xt, augment_rng, opts.augment.jitter_max,
              opts.augment.noise_std);
      Value z_s = model.forward(xs, Domain::source, Mode::train, dropout_rng);
      Value z_t = model.forward(xt, Domain::target, Mode::train, dropout_rng);
      Value loss =
          total_loss(z_s, labels_of(source_train, s_idx), z_t,
                     labels_of(target_train, t_idx), w, p.label_smoothing,
                     opts.clamp_mmd);
      if (opts.record_batches) {
        log.push_back({Domain::source, s_idx});
        log.push_back({Domain::target, t_idx});
      }
      runner.push(std::move(loss), epoch, lr);
    }
    runner.flush(epoch, lr);

    const double val_acc =
        has_val ? evaluate(model, target_val, Domain::target).accuracy : kNan;
    rec.history.push_back({epoch, runner.epoch_mean_loss(), w.w_t,
                           w.lambda_mmd, lr, val_acc});
    if (opts.record_batches) rec.batch_log.push_back(std::move(log));
    rec.epochs_run = epoch;
    if (stop.observe(model, epoch, val_acc)) break;
  }
  stop.finish(model);
  rec.best_epoch = stop.best_epoch;
  rec.best_val_accuracy = has_val ? stop.best_acc : kNan;
  return rec;
}

RunRecord train_baseline(BaselineKind kind, Model& model,
                         const TrainPlan& plan, const EpochSet& train_set,
                         const EpochSet& target_val,
                         const TrainerOptions& opts, const TrainSeeds& seeds,
                         const std::vector<std::vector<BatchDraw>>* schedule) {
  (void)kind;  // target_only and pooled differ only in the set they get
  opts.validate();
  train_set.validate();
  target_val.validate();
  if (train_set.n_trials() == 0) {
    throw ValueError("train_baseline: empty training split");
  }
  if (plan.max_epochs < 1) {
    throw ConfigError("train_baseline: max_epochs must be >= 1");
  }

  Rng shuffle_rng(seeds.shuffle);
  Rng augment_rng(seeds.augment);
  Rng dropout_rng(seeds.dropout);
  Adamax opt(model.parameters(),
             {opts.beta1, opts.beta2, opts.weight_decay, opts.adamax_eps});
  const bool has_val = target_val.n_trials() > 0;
  StopState stop{has_val, opts.patience};
  const std::int64_t n = train_set.n_trials();

  RunRecord rec;
  WindowRunner runner(opt, opts.grad_accum, rec);
  for (std::int64_t epoch = 1; epoch <= plan.max_epochs; ++epoch) {
    if (schedule &&
        epoch > static_cast<std::int64_t>(schedule->size())) {
      break;
    }
    const double lr = cosine_lr(epoch, plan.max_epochs, opts.lr, opts.lr_min);

    std::vector<BatchDraw> draws;
    if (schedule) {
      draws = (*schedule)[static_cast<std::size_t>(epoch - 1)];
    } else {
      for (auto& idx : chunk(shuffle_rng.permutation(n), opts.batch_size)) {
        draws.push_back({Domain::target, std::move(idx)});
      }
    }

    std::vector<BatchDraw> log;
    for (const BatchDraw& draw : draws) {
      Tensor x = gather_trials(train_set, draw.indices);
      augment(x, augment_rng, opts.augment.jitter_max,
              opts.augment.noise_std);
      Value z = model.forward(x, draw.domain, Mode::train, dropout_rng);
      Value loss = scale(
          cross_entropy(z, labels_of(train_set, draw.indices),
                        plan.label_smoothing),
          1.0);
      if (opts.record_batches) log.push_back(draw);
      runner.push(std::move(loss), epoch, lr);
    }
    runner.flush(epoch, lr);

    const double val_acc =
        has_val ? evaluate(model, target_val, Domain::target).accuracy : kNan;
    rec.history.push_back(
        {epoch, runner.epoch_mean_loss(), 1.0, 0.0, lr, val_acc});
    if (opts.record_batches) rec.batch_log.push_back(std::move(log));
    rec.epochs_run = epoch;
    if (stop.observe(model, epoch, val_acc)) break;
  }
  stop.finish(model);
  rec.best_epoch = stop.best_epoch;
  rec.best_val_accuracy = has_val ? stop.best_acc : kNan;
  return rec;
}

EvalResult evaluate(Model& model, const EpochSet& set, Domain domain) {
  set.validate();
  const std::int64_t n = set.n_trials();
  if (n == 0) throw ValueError("evaluate: empty set");

  Rng unused(0);
  EvalResult res;
  res.scores.reserve(static_cast<std::size_t>(n));
  std::int64_t correct = 0;
  constexpr std::int64_t kChunk = 256;
  for (std::int64_t start = 0; start < n; start += kChunk) {
    const std::int64_t stop_at = std::min(n, start + kChunk);
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(stop_at - start));
    for (std::int64_t i = start; i < stop_at; ++i) idx.push_back(i);

    Tensor x = gather_trials(set, idx);
    Value z = model.forward(x, domain, Mode::eval, unused);
    const Tensor& logits = z.val();
    const std::int64_t classes = logits.dim(1);
    for (std::int64_t b = 0; b < stop_at - start; ++b) {
      std::int64_t pred = 0;
      for (std::int64_t c = 1; c < classes; ++c) {
        if (logits.at(b, c) > logits.at(b, pred)) pred = c;
      }
      if (pred == set.labels[static_cast<std::size_t>(start + b)]) ++correct;
      res.scores.push_back(logits.at(b, 1) - logits.at(b, 0));
    }
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  res.auc = auc(res.scores, labels_of(set, all_indices(set)));
  return res;
}

}  // namespace asmmd
