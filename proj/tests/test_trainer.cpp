#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <doctest.h>

#include "asmmd/conformer.hpp"
#include "asmmd/errors.hpp"
#include "asmmd/synth.hpp"
#include "asmmd/trainer.hpp"

using namespace asmmd;

namespace {

// Short epochs so the conv front end stays cheap in unit tests.
SynthConfig tiny_synth(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_subjects = 2;
  cfg.trials_per_subject = 40;
  cfg.oddball_fraction = 0.5;
  cfg.p300_latency_ms = 100.0;
  cfg.p300_width_ms = 60.0;
  cfg.noise_std = 3.0;
  cfg.n_samples = 40;
  cfg.window_start_ms = -50.0;
  cfg.seed = seed;
  return cfg;
}

BackboneConfig tiny_backbone() {
  BackboneConfig cfg;
  cfg.n_channels = 5;
  cfg.n_samples = 40;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.head_dim = 4;
  cfg.n_layers = 1;
  cfg.ffn_mult = 2;
  cfg.dropout = 0.1;
  cfg.temporal_kernel = 9;
  cfg.n_temporal_filters = 4;
  cfg.pool_window = 8;
  cfg.pool_stride = 4;
  return cfg;
}

TrainerOptions fast_options() {
  TrainerOptions opts;
  opts.batch_size = 8;
  opts.augment.jitter_max = 2;
  opts.augment.noise_std = 0.005;
  return opts;
}

// First `want` indices of each class, interleaved trial order.
std::vector<std::int64_t> per_class_indices(const EpochSet& set,
                                            std::int64_t want_each,
                                            std::int64_t skip_each = 0) {
  std::vector<std::int64_t> out;
  std::int64_t taken[2] = {0, 0};
  std::int64_t skipped[2] = {0, 0};
  for (std::int64_t t = 0; t < set.n_trials(); ++t) {
    const int y = set.labels[static_cast<std::size_t>(t)];
    if (skipped[y] < skip_each) {
      ++skipped[y];
      continue;
    }
    if (taken[y] < want_each) {
      ++taken[y];
      out.push_back(t);
    }
  }
  REQUIRE(taken[0] == want_each);
  REQUIRE(taken[1] == want_each);
  return out;
}

bool history_equal(const RunRecord& a, const RunRecord& b) {
  if (a.history.size() != b.history.size()) return false;
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    const EpochStats &x = a.history[i], &y = b.history[i];
    if (x.epoch != y.epoch || x.mean_loss != y.mean_loss ||
        x.w_t != y.w_t || x.lambda_mmd != y.lambda_mmd || x.lr != y.lr ||
        x.val_accuracy != y.val_accuracy) {
      return false;
    }
  }
  return a.best_epoch == b.best_epoch && a.step_losses == b.step_losses;
}

}  // namespace

TEST_CASE("asmmd training is deterministic in its seeds") {
  EpochSet source = synth_generate(tiny_synth(5));
  SynthConfig tcfg = tiny_synth(6);
  tcfg.latency_shift_ms = 20.0;
  EpochSet target = synth_generate(tcfg);

  EpochSet t_train = target.subset(per_class_indices(target, 12));
  EpochSet t_val = target.subset(per_class_indices(target, 6, 12));

  TrainPlan plan;
  plan.warmup_epochs = 3;
  plan.max_epochs = 5;
  TrainerOptions opts = fast_options();
  TrainSeeds seeds{11, 22, 33};

  Model m1 = Model::build(tiny_backbone(), 77);
  RunRecord r1 = train_asmmd(m1, plan, source, t_train, t_val, opts, seeds);
  Model m2 = Model::build(tiny_backbone(), 77);
  RunRecord r2 = train_asmmd(m2, plan, source, t_train, t_val, opts, seeds);

  CHECK(history_equal(r1, r2));
  CHECK(r1.epochs_run == 5);
  REQUIRE(r1.history.size() == 5);
  CHECK(r1.history[0].w_t < r1.history[4].w_t);
  CHECK(r1.history[0].lambda_mmd < r1.history[4].lambda_mmd);
  CHECK(r1.history[0].lr > r1.history[4].lr);

  EvalResult e1 = evaluate(m1, t_val, Domain::target);
  EvalResult e2 = evaluate(m2, t_val, Domain::target);
  CHECK(e1.accuracy == e2.accuracy);
  CHECK(e1.scores == e2.scores);

  TrainSeeds other{11, 22, 34};
  Model m3 = Model::build(tiny_backbone(), 77);
  RunRecord r3 = train_asmmd(m3, plan, source, t_train, t_val, opts, other);
  CHECK_FALSE(r1.step_losses == r3.step_losses);
}

TEST_CASE("best-epoch bookkeeping matches the recorded history") {
  EpochSet source = synth_generate(tiny_synth(15));
  EpochSet target = synth_generate(tiny_synth(16));
  EpochSet t_train = target.subset(per_class_indices(target, 12));
  EpochSet t_val = target.subset(per_class_indices(target, 6, 12));

  TrainPlan plan;
  plan.warmup_epochs = 2;
  plan.max_epochs = 6;
  TrainerOptions opts = fast_options();
  Model model = Model::build(tiny_backbone(), 3);
  RunRecord rec =
      train_asmmd(model, plan, source, t_train, t_val, opts, {1, 2, 3});

  REQUIRE(rec.best_epoch >= 1);
  const double best =
      rec.history[static_cast<std::size_t>(rec.best_epoch - 1)].val_accuracy;
  CHECK(best == rec.best_val_accuracy);
  for (const EpochStats& row : rec.history) {
    CHECK(row.val_accuracy <= best);
    if (row.epoch < rec.best_epoch) CHECK(row.val_accuracy < best);
  }

  // The restored weights must reproduce the best epoch's metric.
  EvalResult eval = evaluate(model, t_val, Domain::target);
  CHECK(eval.accuracy == best);
}

TEST_CASE("early stopping halts stale runs and keeps the best checkpoint") {
  EpochSet source = synth_generate(tiny_synth(25));
  EpochSet target = synth_generate(tiny_synth(26));
  EpochSet t_train = target.subset(per_class_indices(target, 10));
  EpochSet t_val = target.subset(per_class_indices(target, 4, 10));

  TrainPlan plan;
  plan.warmup_epochs = 2;
  plan.max_epochs = 60;
  TrainerOptions opts = fast_options();
  opts.patience = 3;
  Model model = Model::build(tiny_backbone(), 5);
  RunRecord rec =
      train_asmmd(model, plan, source, t_train, t_val, opts, {7, 8, 9});

  CHECK(rec.epochs_run < 60);
  CHECK(rec.epochs_run ==
        static_cast<std::int64_t>(rec.history.size()));
  CHECK(rec.best_epoch + opts.patience == rec.epochs_run);
}

TEST_CASE("batch log records full paired traversal") {
  EpochSet source = synth_generate(tiny_synth(35));  // 80 trials
  EpochSet target = synth_generate(tiny_synth(36));
  EpochSet t_train = target.subset(per_class_indices(target, 6));  // 12
  EpochSet t_val = target.subset(per_class_indices(target, 4, 6));

  TrainPlan plan;
  plan.warmup_epochs = 2;
  plan.max_epochs = 3;
  TrainerOptions opts = fast_options();
  opts.record_batches = true;
  Model model = Model::build(tiny_backbone(), 9);
  RunRecord rec =
      train_asmmd(model, plan, source, t_train, t_val, opts, {4, 5, 6});

  REQUIRE(rec.batch_log.size() == 3);
  const std::int64_t steps = (80 + 7) / 8;
  for (const auto& epoch_draws : rec.batch_log) {
    REQUIRE(epoch_draws.size() == static_cast<std::size_t>(2 * steps));
    std::vector<bool> seen(80, false);
    for (std::size_t i = 0; i < epoch_draws.size(); ++i) {
      const BatchDraw& draw = epoch_draws[i];
      if (i % 2 == 0) {
        CHECK(draw.domain == Domain::source);
        for (std::int64_t idx : draw.indices) {
          CHECK_FALSE(seen[static_cast<std::size_t>(idx)]);
          seen[static_cast<std::size_t>(idx)] = true;
        }
      } else {
        CHECK(draw.domain == Domain::target);
        // Cycled target batches always arrive at full size.
        CHECK(draw.indices.size() == 8);
        for (std::int64_t idx : draw.indices) {
          CHECK(idx >= 0);
          CHECK(idx < 12);
        }
      }
    }
    CHECK(std::count(seen.begin(), seen.end(), true) == 80);
  }
}

TEST_CASE("the degenerate recipe collapses onto the pooled baseline") {
  EpochSet data = synth_generate(tiny_synth(45));
  EpochSet train = data.subset(per_class_indices(data, 12));  // 24 trials
  EpochSet val = data.subset(per_class_indices(data, 6, 12));

  TrainPlan plan;
  plan.warmup_epochs = 2;
  plan.max_epochs = 4;
  plan.lambda0 = 0.0;
  plan.ablation = Ablation::equal_weights;

  TrainerOptions asmmd_opts = fast_options();
  asmmd_opts.record_batches = true;

  Model combo = Model::build(tiny_backbone(), 21, true);
  TrainSeeds seeds{101, 102, 103};
  RunRecord combo_rec =
      train_asmmd(combo, plan, train, train, val, asmmd_opts, seeds);

  TrainerOptions replay_opts = fast_options();
  replay_opts.grad_accum = 2;  // one update per paired step
  Model pooled = Model::build(tiny_backbone(), 21, true);
  RunRecord pooled_rec =
      train_baseline(BaselineKind::pooled, pooled, plan, train, val,
                     replay_opts, seeds, &combo_rec.batch_log);

  REQUIRE(pooled_rec.step_losses.size() == combo_rec.step_losses.size());
  for (std::size_t i = 0; i < combo_rec.step_losses.size(); ++i) {
    CHECK(std::abs(pooled_rec.step_losses[i] - combo_rec.step_losses[i]) <=
          1e-10);
  }
  REQUIRE(pooled_rec.history.size() == combo_rec.history.size());
  for (std::size_t i = 0; i < combo_rec.history.size(); ++i) {
    CHECK(std::abs(pooled_rec.history[i].mean_loss -
                   combo_rec.history[i].mean_loss) <= 1e-10);
    CHECK(pooled_rec.history[i].val_accuracy ==
          combo_rec.history[i].val_accuracy);
  }
  CHECK(pooled_rec.best_epoch == combo_rec.best_epoch);

  EvalResult ec = evaluate(combo, val, Domain::target);
  EvalResult ep = evaluate(pooled, val, Domain::target);
  for (std::size_t i = 0; i < ec.scores.size(); ++i) {
    CHECK(std::abs(ec.scores[i] - ep.scores[i]) <= 1e-10);
  }
}

TEST_CASE("pooled training on target data alone is the target-only run") {
  EpochSet target = synth_generate(tiny_synth(55));
  EpochSet train = target.subset(per_class_indices(target, 10));
  EpochSet val = target.subset(per_class_indices(target, 5, 10));

  TrainPlan plan;
  plan.warmup_epochs = 2;
  plan.max_epochs = 4;
  TrainerOptions opts = fast_options();
  TrainSeeds seeds{61, 62, 63};

  Model a = Model::build(tiny_backbone(), 13, true);
  RunRecord ra =
      train_baseline(BaselineKind::pooled, a, plan, train, val, opts, seeds);
  Model b = Model::build(tiny_backbone(), 13, true);
  RunRecord rb = train_baseline(BaselineKind::target_only, b, plan, train,
                                val, opts, seeds);
  CHECK(history_equal(ra, rb));
}

TEST_CASE("target-only training drives training accuracy to one on clean data") {
  SynthConfig cfg = tiny_synth(65);
  cfg.noise_std = 0.3;
  EpochSet target = synth_generate(cfg);
  EpochSet train = target.subset(per_class_indices(target, 12));
  EpochSet val = target.subset(per_class_indices(target, 6, 12));

  TrainPlan plan;
  plan.warmup_epochs = 2;
  plan.max_epochs = 100;
  TrainerOptions opts = fast_options();
  opts.patience = 100;
  Model model = Model::build(tiny_backbone(), 17, true);
  train_baseline(BaselineKind::target_only, model, plan, train, val, opts,
                 {71, 72, 73});

  EvalResult on_train = evaluate(model, train, Domain::target);
  CHECK(on_train.accuracy == 1.0);
}

TEST_CASE("asmmd improves on its first epoch across seeds") {
  // Noisy enough that epoch one cannot saturate the validation set, so a
  // healthy run has room to beat it.
  int improved = 0;
  for (std::uint64_t seed : {42ULL, 123ULL, 456ULL, 789ULL, 321ULL}) {
    SynthConfig scfg = tiny_synth(200 + seed);
    scfg.n_subjects = 3;
    scfg.noise_std = 12.0;
    EpochSet source = synth_generate(scfg);
    SynthConfig tcfg = tiny_synth(300 + seed);
    tcfg.noise_std = 12.0;
    tcfg.latency_shift_ms = 20.0;
    tcfg.noise_scale = 1.3;
    EpochSet target = synth_generate(tcfg);
    EpochSet t_train = target.subset(per_class_indices(target, 12));
    EpochSet t_val = target.subset(per_class_indices(target, 8, 12));

    TrainPlan plan;
    plan.warmup_epochs = 5;
    plan.max_epochs = 40;
    TrainerOptions opts = fast_options();
    Model model = Model::build(tiny_backbone(), seed);
    RunRecord rec = train_asmmd(model, plan, source, t_train, t_val, opts,
                                {seed + 1, seed + 2, seed + 3});
    if (rec.best_val_accuracy > rec.history[0].val_accuracy) ++improved;
  }
  CHECK(improved >= 4);
}

TEST_CASE("all-zero parameters make evaluate fall back to class zero") {
  EpochSet target = synth_generate(tiny_synth(75));
  EpochSet val = target.subset(per_class_indices(target, 8));

  Model model = Model::build(tiny_backbone(), 19);
  for (Value& p : model.parameters()) {
    Tensor& t = p.mutable_val();
    std::fill(t.data.begin(), t.data.end(), 0.0);
  }
  EvalResult res = evaluate(model, val, Domain::target);

  std::int64_t zeros = 0;
  for (std::uint8_t y : val.labels) zeros += y == 0 ? 1 : 0;
  CHECK(res.accuracy ==
        static_cast<double>(zeros) / static_cast<double>(val.n_trials()));
  for (double s : res.scores) CHECK(s == 0.0);
  CHECK(res.auc == 0.5);
}

TEST_CASE("trainer input validation") {
  EpochSet target = synth_generate(tiny_synth(85));
  EpochSet train = target.subset(per_class_indices(target, 8));
  EpochSet val = target.subset(per_class_indices(target, 4, 8));
  EpochSet empty;
  empty.n_channels = target.n_channels;
  empty.n_samples = target.n_samples;
  empty.channel_names = target.channel_names;

  TrainPlan plan;
  plan.max_epochs = 2;
  TrainerOptions opts = fast_options();
  Model model = Model::build(tiny_backbone(), 23);

  CHECK_THROWS_AS(
      train_asmmd(model, plan, empty, train, val, opts, {1, 2, 3}),
      ValueError);
  CHECK_THROWS_AS(
      train_asmmd(model, plan, train, empty, val, opts, {1, 2, 3}),
      ValueError);
  CHECK_THROWS_AS(train_baseline(BaselineKind::pooled, model, plan, empty,
                                 val, opts, {1, 2, 3}),
                  ValueError);
  CHECK_THROWS_AS(evaluate(model, empty, Domain::target), ValueError);

  TrainerOptions bad = opts;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = opts;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = opts;
  bad.patience = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  EpochSet one_class = target.subset({0});
  bool found = false;
  for (std::int64_t t = 0; t < target.n_trials() && !found; ++t) {
    if (target.labels[static_cast<std::size_t>(t)] == 1) {
      one_class = target.subset({t, t});
      found = true;
    }
  }
  REQUIRE(found);
  CHECK_THROWS_AS(evaluate(model, one_class, Domain::target), NumericError);
}
