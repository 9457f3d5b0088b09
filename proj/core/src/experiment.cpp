#include "asmmd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <thread>
#include <utility>

#include <fmt/core.h>

#include "asmmd/errors.hpp"
#include "asmmd/log.hpp"
#include "asmmd/rng.hpp"
#include "asmmd/sampling.hpp"
#include "asmmd/schedule.hpp"

namespace asmmd {

namespace fs = std::filesystem;

const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> methods = {
      "asmmd",         "pooled", "target_only", "equal_weights",
      "fixed_weights", "no_mmd", "no_splitbn"};
  return methods;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = s.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(trim(s.substr(start)));
      return out;
    }
    out.push_back(trim(s.substr(start, comma - start)));
    start = comma + 1;
  }
}

std::int64_t as_i64(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected integer, got '" +
                      v + "'");
  }
  return out;
}

std::uint64_t as_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key +
                      "': expected unsigned integer, got '" + v + "'");
  }
  return out;
}

double as_f64(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected number, got '" + v +
                      "'");
  }
  return out;
}

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" +
                    v + "'");
}

std::vector<double> as_f64_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& item : split_csv(v)) out.push_back(as_f64(key, item));
  return out;
}

std::vector<std::uint64_t> as_u64_list(const std::string& key,
                                       const std::string& v) {
  std::vector<std::uint64_t> out;
  for (const std::string& item : split_csv(v)) out.push_back(as_u64(key, item));
  return out;
}

std::string show_f64(double v) { return fmt::format("{:.17g}", v); }
std::string show_bool(bool b) { return b ? "true" : "false"; }

template <typename T, typename Show>
std::string show_list(const std::vector<T>& items, Show show) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += show(items[i]);
  }
  return out;
}

struct KeyDef {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<KeyDef>& key_defs() {
  using C = ExperimentConfig;
  auto i64 = [](const std::string& key, std::int64_t C::* field) {
    return KeyDef{
        key,
        [key, field](C& c, const std::string& v) { c.*field = as_i64(key, v); },
        [field](const C& c) { return fmt::format("{}", c.*field); }};
  };
  auto f64 = [](const std::string& key, double C::* field) {
    return KeyDef{
        key,
        [key, field](C& c, const std::string& v) { c.*field = as_f64(key, v); },
        [field](const C& c) { return show_f64(c.*field); }};
  };
  auto u64 = [](const std::string& key, std::uint64_t C::* field) {
    return KeyDef{
        key,
        [key, field](C& c, const std::string& v) { c.*field = as_u64(key, v); },
        [field](const C& c) { return fmt::format("{}", c.*field); }};
  };
  auto str = [](const std::string& key, std::string C::* field) {
    return KeyDef{key, [field](C& c, const std::string& v) { c.*field = v; },
                  [field](const C& c) { return c.*field; }};
  };
  auto sub_i64 = [](const std::string& key, auto member, auto project) {
    return KeyDef{key,
                  [key, member, project](C& c, const std::string& v) {
                    project(c.*member) = as_i64(key, v);
                  },
                  [member, project](const C& c) {
                    auto copy = c.*member;
                    return fmt::format("{}", project(copy));
                  }};
  };
  auto sub_f64 = [](const std::string& key, auto member, auto project) {
    return KeyDef{key,
                  [key, member, project](C& c, const std::string& v) {
                    project(c.*member) = as_f64(key, v);
                  },
                  [member, project](const C& c) {
                    auto copy = c.*member;
                    return show_f64(project(copy));
                  }};
  };
  auto sub_bool = [](const std::string& key, auto member, auto project) {
    return KeyDef{key,
                  [key, member, project](C& c, const std::string& v) {
                    project(c.*member) = as_bool(key, v);
                  },
                  [member, project](const C& c) {
                    auto copy = c.*member;
                    return show_bool(project(copy));
                  }};
  };

  static const std::vector<KeyDef> defs = [&] {
    std::vector<KeyDef> d;
    d.push_back(str("source_path", &C::source_path));
    d.push_back(str("target_path", &C::target_path));
    d.push_back(str("out_dir", &C::out_dir));
    d.push_back(
        {"methods",
         [](C& c, const std::string& v) { c.methods = split_csv(v); },
         [](const C& c) {
           return show_list(c.methods, [](const std::string& s) { return s; });
         }});
    d.push_back(i64("k_folds", &C::k_folds));
    d.push_back({"seeds",
                 [](C& c, const std::string& v) {
                   c.seeds = as_u64_list("seeds", v);
                 },
                 [](const C& c) {
                   return show_list(c.seeds, [](std::uint64_t s) {
                     return fmt::format("{}", s);
                   });
                 }});
    d.push_back(f64("val_fraction", &C::val_fraction));

    d.push_back(i64("warmup_epochs", &C::warmup_epochs));
    d.push_back(i64("max_epochs", &C::max_epochs));
    d.push_back(f64("lambda0", &C::lambda0));
    d.push_back(f64("clip_lo", &C::clip_lo));
    d.push_back(f64("clip_hi", &C::clip_hi));
    d.push_back(f64("label_smoothing", &C::label_smoothing));

    auto t = &C::trainer;
    d.push_back(sub_i64("batch_size", t,
                        [](auto& o) -> auto& { return o.batch_size; }));
    d.push_back(sub_i64("grad_accum", t,
                        [](auto& o) -> auto& { return o.grad_accum; }));
    d.push_back(sub_f64("lr", t, [](auto& o) -> auto& { return o.lr; }));
    d.push_back(
        sub_f64("lr_min", t, [](auto& o) -> auto& { return o.lr_min; }));
    d.push_back(sub_f64("beta1", t, [](auto& o) -> auto& { return o.beta1; }));
    d.push_back(sub_f64("beta2", t, [](auto& o) -> auto& { return o.beta2; }));
    d.push_back(sub_f64("weight_decay", t,
                        [](auto& o) -> auto& { return o.weight_decay; }));
    d.push_back(sub_f64("adamax_eps", t,
                        [](auto& o) -> auto& { return o.adamax_eps; }));
    d.push_back(
        sub_i64("patience", t, [](auto& o) -> auto& { return o.patience; }));
    d.push_back(sub_i64("jitter_max", t, [](auto& o) -> auto& {
      return o.augment.jitter_max;
    }));
    d.push_back(sub_f64("noise_std", t, [](auto& o) -> auto& {
      return o.augment.noise_std;
    }));
    d.push_back(
        sub_bool("clamp_mmd", t, [](auto& o) -> auto& { return o.clamp_mmd; }));

    auto b = &C::backbone;
    d.push_back(
        sub_i64("d_model", b, [](auto& o) -> auto& { return o.d_model; }));
    d.push_back(
        sub_i64("n_heads", b, [](auto& o) -> auto& { return o.n_heads; }));
    d.push_back(
        sub_i64("n_layers", b, [](auto& o) -> auto& { return o.n_layers; }));
    d.push_back(
        sub_i64("ffn_mult", b, [](auto& o) -> auto& { return o.ffn_mult; }));
    d.push_back(
        sub_f64("dropout", b, [](auto& o) -> auto& { return o.dropout; }));
    d.push_back(sub_i64("temporal_kernel", b, [](auto& o) -> auto& {
      return o.temporal_kernel;
    }));
    d.push_back(sub_i64("n_temporal_filters", b, [](auto& o) -> auto& {
      return o.n_temporal_filters;
    }));
    d.push_back(sub_i64("pool_window", b,
                        [](auto& o) -> auto& { return o.pool_window; }));
    d.push_back(sub_i64("pool_stride", b,
                        [](auto& o) -> auto& { return o.pool_stride; }));
    d.push_back(
        sub_i64("n_classes", b, [](auto& o) -> auto& { return o.n_classes; }));
    d.push_back(
        sub_i64("head_dim", b, [](auto& o) -> auto& { return o.head_dim; }));
    d.push_back(sub_i64("head_hidden", b,
                        [](auto& o) -> auto& { return o.head_hidden; }));
    d.push_back(sub_bool("single_token_front_end", b, [](auto& o) -> auto& {
      return o.single_token_front_end;
    }));
    d.push_back(sub_bool("use_positional_encoding", b, [](auto& o) -> auto& {
      return o.use_positional_encoding;
    }));
    d.push_back(sub_f64("bn_momentum", b,
                        [](auto& o) -> auto& { return o.bn_momentum; }));
    d.push_back(
        sub_f64("bn_eps", b, [](auto& o) -> auto& { return o.bn_eps; }));
    d.push_back(
        sub_f64("ln_eps", b, [](auto& o) -> auto& { return o.ln_eps; }));

    d.push_back(i64("source_oddball_per_subject",
                    &C::source_oddball_per_subject));
    d.push_back(i64("source_standard_per_subject",
                    &C::source_standard_per_subject));
    d.push_back(i64("target_oddball_per_subject",
                    &C::target_oddball_per_subject));
    d.push_back(i64("target_standard_per_subject",
                    &C::target_standard_per_subject));

    auto s = &C::synth;
    d.push_back(sub_i64("synth_n_subjects", s,
                        [](auto& o) -> auto& { return o.n_subjects; }));
    d.push_back(sub_i64("synth_trials_per_subject", s, [](auto& o) -> auto& {
      return o.trials_per_subject;
    }));
    d.push_back(sub_f64("synth_oddball_fraction", s, [](auto& o) -> auto& {
      return o.oddball_fraction;
    }));
    d.push_back({"synth_amplitudes",
                 [](C& c, const std::string& v) {
                   c.synth.p300_amplitude = as_f64_list("synth_amplitudes", v);
                 },
                 [](const C& c) {
                   return show_list(c.synth.p300_amplitude, show_f64);
                 }});
    d.push_back(sub_f64("synth_latency_ms", s, [](auto& o) -> auto& {
      return o.p300_latency_ms;
    }));
    d.push_back(sub_f64("synth_width_ms", s,
                        [](auto& o) -> auto& { return o.p300_width_ms; }));
    d.push_back(sub_f64("synth_noise_std", s,
                        [](auto& o) -> auto& { return o.noise_std; }));
    d.push_back(sub_i64("synth_n_samples", s,
                        [](auto& o) -> auto& { return o.n_samples; }));
    d.push_back(sub_f64("synth_window_start_ms", s, [](auto& o) -> auto& {
      return o.window_start_ms;
    }));
    d.push_back(sub_f64("synth_sample_rate_hz", s, [](auto& o) -> auto& {
      return o.sample_rate_hz;
    }));
    d.push_back({"synth_channel_names",
                 [](C& c, const std::string& v) {
                   c.synth.channel_names = split_csv(v);
                 },
                 [](const C& c) {
                   return show_list(c.synth.channel_names,
                                    [](const std::string& n) { return n; });
                 }});
    d.push_back({"synth_source_seed",
                 [](C& c, const std::string& v) {
                   c.synth.seed = as_u64("synth_source_seed", v);
                 },
                 [](const C& c) { return fmt::format("{}", c.synth.seed); }});
    d.push_back(u64("synth_target_seed", &C::synth_target_seed));
    d.push_back(f64("synth_target_gain", &C::synth_target_gain));
    d.push_back(f64("synth_target_offset", &C::synth_target_offset));
    d.push_back(f64("synth_target_latency_shift_ms",
                    &C::synth_target_latency_shift_ms));
    d.push_back(f64("synth_target_noise_scale", &C::synth_target_noise_scale));
    return d;
  }();
  return defs;
}

const KeyDef* find_key(const std::string& key) {
  for (const KeyDef& def : key_defs()) {
    if (def.key == key) return &def;
  }
  return nullptr;
}

std::int64_t method_id(const std::string& method) {
  const auto& all = known_methods();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i] == method) return static_cast<std::int64_t>(i);
  }
  throw ConfigError("unknown method '" + method + "'");
}

}  // namespace

void ExperimentConfig::validate() const {
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
  if (methods.empty()) throw ConfigError("methods must not be empty");
  for (const std::string& m : methods) method_id(m);
  for (std::size_t i = 0; i < methods.size(); ++i) {
    for (std::size_t j = i + 1; j < methods.size(); ++j) {
      if (methods[i] == methods[j]) {
        throw ConfigError("duplicate method '" + methods[i] + "'");
      }
    }
  }
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  std::set<std::uint64_t> seen(seeds.begin(), seeds.end());
  if (seen.size() != seeds.size()) throw ConfigError("duplicate seed value");
  SplitSpec split{k_folds, seeds, val_fraction};
  split.validate();
  trainer.validate();
  if (source_oddball_per_subject < 1 || source_standard_per_subject < 1 ||
      target_oddball_per_subject < 1 || target_standard_per_subject < 1) {
    throw ConfigError("per-subject budgets must be >= 1");
  }
  TrainPlan plan;
  plan.warmup_epochs = warmup_epochs;
  plan.max_epochs = max_epochs;
  plan.lambda0 = lambda0;
  plan.clip_lo = clip_lo;
  plan.clip_hi = clip_hi;
  plan.label_smoothing = label_smoothing;
  plan.validate();
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::set<std::string> assigned;
  std::istringstream in(text);
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string body = trim(line);
    if (body.empty()) continue;
    std::size_t eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format(
          "config line {}: expected 'key = value', got '{}'", lineno, body));
    }
    std::string key = trim(body.substr(0, eq));
    std::string value = trim(body.substr(eq + 1));
    const KeyDef* def = find_key(key);
    if (!def) {
      throw ConfigError(
          fmt::format("config line {}: unknown key '{}'", lineno, key));
    }
    if (!assigned.insert(key).second) {
      throw ConfigError(
          fmt::format("config line {}: duplicate key '{}'", lineno, key));
    }
    def->set(cfg, value);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> seeds = as_u64_list("seeds", csv);
  if (seeds.empty()) throw ConfigError("seed list must not be empty");
  return seeds;
}

std::vector<std::string> parse_method_list(const std::string& csv) {
  std::vector<std::string> methods = split_csv(csv);
  if (methods.empty()) throw ConfigError("method list must not be empty");
  for (const std::string& m : methods) method_id(m);
  return methods;
}

std::vector<std::pair<std::string, std::string>> render_config(
    const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const KeyDef& def : key_defs()) out.emplace_back(def.key, def.get(cfg));
  return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [key, value] : render_config(cfg)) {
    mix(key);
    mix("=");
    mix(value);
    mix("\n");
  }
  return fmt::format("{:016x}", h);
}

SynthConfig source_synth_config(const ExperimentConfig& cfg) {
  return cfg.synth;
}

SynthConfig target_synth_config(const ExperimentConfig& cfg) {
  SynthConfig t = cfg.synth;
  t.seed = cfg.synth_target_seed;
  t.channel_gain = cfg.synth_target_gain;
  t.channel_offset = cfg.synth_target_offset;
  t.latency_shift_ms = cfg.synth_target_latency_shift_ms;
  t.noise_scale = cfg.synth_target_noise_scale;
  return t;
}

DomainData load_domains(const ExperimentConfig& cfg) {
  DomainData data;
  if (cfg.source_path.empty()) {
    data.source = synth_generate(source_synth_config(cfg));
  } else {
    data.source = read_epochs(cfg.source_path);
  }
  if (cfg.target_path.empty()) {
    data.target = synth_generate(target_synth_config(cfg));
  } else {
    data.target = read_epochs(cfg.target_path);
  }
  data.source.domain_tag = DomainTag::source;
  data.target.domain_tag = DomainTag::target;
  if (data.source.n_channels != data.target.n_channels ||
      data.source.n_samples != data.target.n_samples) {
    throw ConfigError(fmt::format(
        "domain geometry mismatch: source {}x{}, target {}x{}",
        data.source.n_channels, data.source.n_samples, data.target.n_channels,
        data.target.n_samples));
  }
  return data;
}

SingleRun run_single(const ExperimentConfig& cfg, const DomainData& data,
                     const ReplicateSpec& spec) {
  const std::int64_t mid = method_id(spec.method);
  if (spec.fold < 0 || spec.fold >= cfg.k_folds) {
    throw ValueError(fmt::format("fold {} outside [0, {})", spec.fold,
                                 cfg.k_folds));
  }

  Rng budget_src_rng(derive_seed(spec.seed, "budget-source"));
  Rng budget_tgt_rng(derive_seed(spec.seed, "budget-target"));
  EpochSet src = stratified_budget_sample(
      data.source,
      BudgetSpec{cfg.source_oddball_per_subject,
                 cfg.source_standard_per_subject},
      budget_src_rng);
  EpochSet tgt = stratified_budget_sample(
      data.target,
      BudgetSpec{cfg.target_oddball_per_subject,
                 cfg.target_standard_per_subject},
      budget_tgt_rng);

  SplitSpec split_spec{cfg.k_folds, {spec.seed}, cfg.val_fraction};
  std::vector<CvSplit> splits = cv_splits(tgt, split_spec);
  const CvSplit& split = splits[static_cast<std::size_t>(spec.fold)];

  ChannelStats src_stats = zscore_fit(src);
  EpochSet src_z = zscore_apply(src, src_stats);
  EpochSet tgt_train = tgt.subset(split.train);
  ChannelStats tgt_stats = zscore_fit(tgt_train);
  EpochSet tgt_train_z = zscore_apply(tgt_train, tgt_stats);
  EpochSet tgt_val_z = zscore_apply(tgt.subset(split.val), tgt_stats);
  EpochSet tgt_test_z = zscore_apply(tgt.subset(split.test), tgt_stats);

  const bool pooled_bn = spec.method == "pooled" ||
                         spec.method == "target_only" ||
                         spec.method == "no_splitbn";
  BackboneConfig backbone = cfg.backbone;
  backbone.n_channels = data.source.n_channels;
  backbone.n_samples = data.source.n_samples;
  Model model = Model::build(
      backbone, derive_seed(spec.seed, "model-init",
                            static_cast<std::uint64_t>(spec.fold)),
      pooled_bn);

  const auto fold_u = static_cast<std::uint64_t>(spec.fold);
  const auto mid_u = static_cast<std::uint64_t>(mid);
  TrainSeeds train_seeds{derive_seed(spec.seed, "shuffle", fold_u, mid_u),
                         derive_seed(spec.seed, "augment", fold_u, mid_u),
                         derive_seed(spec.seed, "dropout", fold_u, mid_u)};

  TrainPlan plan;
  plan.warmup_epochs = cfg.warmup_epochs;
  plan.max_epochs = cfg.max_epochs;
  plan.lambda0 = cfg.lambda0;
  plan.clip_lo = cfg.clip_lo;
  plan.clip_hi = cfg.clip_hi;
  plan.label_smoothing = cfg.label_smoothing;

  RunRecord record;
  if (spec.method == "pooled") {
    EpochSet pooled_set = concat(src_z, tgt_train_z);
    record = train_baseline(BaselineKind::pooled, model, plan, pooled_set,
                            tgt_val_z, cfg.trainer, train_seeds);
  } else if (spec.method == "target_only") {
    record = train_baseline(BaselineKind::target_only, model, plan,
                            tgt_train_z, tgt_val_z, cfg.trainer, train_seeds);
  } else {
    plan.ablation = ablation_from_string(spec.method);
    record = train_asmmd(model, plan, src_z, tgt_train_z, tgt_val_z,
                         cfg.trainer, train_seeds);
  }

  EvalResult eval = evaluate(model, tgt_test_z, Domain::target);
  ReplicateScore score{spec.method, spec.fold, spec.seed, eval.accuracy,
                       eval.auc};
  return SingleRun{std::move(score), std::move(record), std::move(model)};
}

ReplicateOutput run_replicate(const ExperimentConfig& cfg,
                              const DomainData& data,
                              const ReplicateSpec& spec) {
  SingleRun run = run_single(cfg, data, spec);
  return ReplicateOutput{std::move(run.score), std::move(run.record)};
}

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

void write_replicate_log(const std::string& out_dir,
                         const ReplicateSpec& spec, const RunRecord& record,
                         const std::string& hash) {
  const fs::path path = fs::path(out_dir) / "logs" /
                        fmt::format("{}_seed{}_fold{}.csv", spec.method,
                                    spec.seed, spec.fold);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << fmt::format("# config_hash={}\n", hash);
  out << fmt::format("# best_epoch={} best_val_accuracy={:.6g}\n",
                     record.best_epoch, record.best_val_accuracy);
  out << "epoch,mean_loss,w_t,lambda_mmd,lr,val_accuracy\n";
  for (const EpochStats& row : record.history) {
    out << fmt::format("{},{:.6g},{:.6g},{:.6g},{:.6g},{:.6g}\n", row.epoch,
                       row.mean_loss, row.w_t, row.lambda_mmd, row.lr,
                       row.val_accuracy);
  }
  if (!out.good()) throw IoError("short write on " + path.string());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                std::int64_t workers,
                                const std::string& out_dir) {
  cfg.validate();
  const std::string hash = config_hash(cfg);
  log_info("config hash {}", hash);
  DomainData data = load_domains(cfg);

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "logs", ec);
  if (ec) {
    throw IoError("cannot create output directory '" + out_dir +
                  "': " + ec.message());
  }

  std::vector<ReplicateSpec> specs;
  for (const std::string& method : cfg.methods) {
    for (std::int64_t fold = 0; fold < cfg.k_folds; ++fold) {
      for (std::uint64_t seed : cfg.seeds) {
        specs.push_back({method, seed, fold});
      }
    }
  }

  ExperimentResult result;
  result.rows.resize(specs.size());
  std::atomic<std::size_t> cursor{0};
  std::atomic<std::int64_t> failed{0};

  auto work = [&] {
    while (true) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= specs.size()) return;
      const ReplicateSpec& spec = specs[i];
      try {
        ReplicateOutput out = run_replicate(cfg, data, spec);
        write_replicate_log(out_dir, spec, out.record, hash);
        log_info("{} seed {} fold {}: accuracy {:.6g}, auc {:.6g} ({} epochs)",
                 spec.method, spec.seed, spec.fold, out.score.accuracy,
                 out.score.auc, out.record.epochs_run);
        result.rows[i] = std::move(out.score);
      } catch (const std::exception& e) {
        log_error("{} seed {} fold {} failed: {}", spec.method, spec.seed,
                  spec.fold, e.what());
        result.rows[i] = {spec.method, spec.fold, spec.seed, kNan, kNan};
        failed.fetch_add(1);
      }
    }
  };

  const std::int64_t n_threads = std::min<std::int64_t>(
      std::max<std::int64_t>(workers, 1),
      static_cast<std::int64_t>(specs.size()));
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (std::int64_t i = 0; i < n_threads; ++i) pool.emplace_back(work);
    for (std::thread& th : pool) th.join();
  }

  result.n_failed = failed.load();
  write_results_csv((fs::path(out_dir) / "results.csv").string(), result.rows,
                    hash, cfg.seeds);
  log_info("wrote {} rows to {}/results.csv ({} failed)", result.rows.size(),
           out_dir, result.n_failed);
  return result;
}

void write_results_csv(const std::string& path,
                       const std::vector<ReplicateScore>& rows,
                       const std::string& hash,
                       const std::vector<std::uint64_t>& seeds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << fmt::format("# config_hash={}\n", hash);
  std::string seed_list;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) seed_list += ",";
    seed_list += fmt::format("{}", seeds[i]);
  }
  out << fmt::format("# seeds={}\n", seed_list);
  out << fmt::format("# version={}\n", kVersion);
  out << "method,fold,seed,accuracy,auc\n";
  for (const ReplicateScore& row : rows) {
    out << fmt::format("{},{},{},{:.6g},{:.6g}\n", row.method, row.fold,
                       row.seed, row.accuracy, row.auc);
  }
  if (!out.good()) throw IoError("short write on " + path);
}

ResultsFile read_results_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open results file '" + path + "'");
  ResultsFile out;
  std::string line;
  std::int64_t lineno = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string body = trim(line);
    if (body.empty()) continue;
    if (body[0] == '#') {
      std::string comment = trim(body.substr(1));
      std::size_t eq = comment.find('=');
      if (eq != std::string::npos) {
        std::string key = trim(comment.substr(0, eq));
        std::string value = trim(comment.substr(eq + 1));
        if (key == "config_hash") out.config_hash = value;
        if (key == "version") out.version = value;
      }
      continue;
    }
    if (!header_seen) {
      if (body != "method,fold,seed,accuracy,auc") {
        throw FormatError(fmt::format(
            "results line {}: expected header 'method,fold,seed,accuracy,auc'",
            lineno));
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> fields = split_csv(body);
    if (fields.size() != 5) {
      throw FormatError(
          fmt::format("results line {}: expected 5 fields, got {}", lineno,
                      fields.size()));
    }
    if (fields[0].empty()) {
      throw FormatError(fmt::format("results line {}: empty method", lineno));
    }
    ReplicateScore row;
    row.method = fields[0];
    row.fold = as_i64("fold", fields[1]);
    row.seed = as_u64("seed", fields[2]);
    row.accuracy = as_f64("accuracy", fields[3]);
    row.auc = as_f64("auc", fields[4]);
    out.rows.push_back(std::move(row));
  }
  if (!header_seen) throw FormatError("results file has no header row");
  return out;
}

SummaryReport build_report(const std::vector<ReplicateScore>& rows,
                           std::int64_t n_train, std::int64_t n_test) {
  if (rows.empty()) throw ValueError("report: no replicate rows");
  if (n_train < 1 || n_test < 1) {
    throw ValueError("report: n_train and n_test must be >= 1");
  }

  using Key = std::pair<std::int64_t, std::uint64_t>;  // (fold, seed)
  std::vector<std::string> order;
  std::map<std::string, std::map<Key, const ReplicateScore*>> by_method;
  std::set<std::int64_t> folds;
  std::set<std::uint64_t> seeds;
  for (const ReplicateScore& row : rows) {
    auto [it, inserted] = by_method.try_emplace(row.method);
    if (inserted) order.push_back(row.method);
    if (!it->second.emplace(Key{row.fold, row.seed}, &row).second) {
      throw ValueError(fmt::format(
          "report: duplicate replicate ({}, fold {}, seed {})", row.method,
          row.fold, row.seed));
    }
    folds.insert(row.fold);
    seeds.insert(row.seed);
  }

  std::vector<Key> keys;
  for (std::int64_t f : folds) {
    for (std::uint64_t s : seeds) keys.emplace_back(f, s);
  }
  for (const std::string& method : order) {
    const auto& have = by_method.at(method);
    std::string missing;
    for (const Key& key : keys) {
      if (!have.count(key)) {
        if (!missing.empty()) missing += ", ";
        missing += fmt::format("(fold {}, seed {})", key.first, key.second);
      }
    }
    if (!missing.empty()) {
      throw ValueError(fmt::format("report: method '{}' missing replicates: {}",
                                   method, missing));
    }
  }

  SummaryReport report;
  report.design =
      PairedDesign{static_cast<std::int64_t>(folds.size()),
                   static_cast<std::int64_t>(seeds.size()), n_train, n_test};

  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>
      series;
  for (const std::string& method : order) {
    const auto& have = by_method.at(method);
    std::vector<double> accs, aucs;
    accs.reserve(keys.size());
    aucs.reserve(keys.size());
    for (const Key& key : keys) {
      const ReplicateScore* row = have.at(key);
      accs.push_back(row->accuracy);
      aucs.push_back(row->auc);
    }
    report.methods.push_back(MethodSummary{method, t_ci(accs), t_ci(aucs)});
    series.emplace(method, std::make_pair(std::move(accs), std::move(aucs)));
  }

  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const auto& a = series.at(order[i]);
      const auto& b = series.at(order[j]);
      report.pairs.push_back(PairComparison{
          order[i], order[j],
          corrected_paired_ttest(a.first, b.first, report.design),
          corrected_paired_ttest(a.second, b.second, report.design)});
    }
  }
  return report;
}

std::string render_report(const SummaryReport& report) {
  const PairedDesign& d = report.design;
  const std::int64_t K = d.k_folds * d.r_seeds;
  const double rho =
      static_cast<double>(d.n_test) / static_cast<double>(d.n_train);
  const double gamma = 1.0 / static_cast<double>(K) + rho;

  std::string out;
  out += fmt::format("AS-MMD replicate report (version {})\n", kVersion);
  if (!report.config_hash.empty()) {
    out += fmt::format("config_hash: {}\n", report.config_hash);
  }
  out += fmt::format(
      "design: K={} ({} folds x {} seeds), n_train={}, n_test={}, "
      "rho={:.6g}, gamma={:.6g}\n\n",
      K, d.k_folds, d.r_seeds, d.n_train, d.n_test, rho, gamma);

  out += fmt::format("{:<16} {:>10} {:<24} {:>10} {:<24}\n", "method",
                     "accuracy", " [95% CI]", "auc", " [95% CI]");
  for (const MethodSummary& m : report.methods) {
    out += fmt::format(
        "{:<16} {:>10.6g} {:<24} {:>10.6g} {:<24}\n", m.method,
        m.accuracy.mean,
        fmt::format(" [{:.6g}, {:.6g}]", m.accuracy.lo, m.accuracy.hi),
        m.auc.mean, fmt::format(" [{:.6g}, {:.6g}]", m.auc.lo, m.auc.hi));
  }

  if (!report.pairs.empty()) {
    out += fmt::format(
        "\ncorrected resampled paired t-tests (nu={}):\n{:<34} {:<10} {:>12} "
        "{:>12}\n",
        K - 1, "pair", "metric", "t_corr", "p");
    for (const PairComparison& pair : report.pairs) {
      const std::string name = pair.method_a + " vs " + pair.method_b;
      out += fmt::format("{:<34} {:<10} {:>12.6g} {:>12.6g}{}\n", name,
                         "accuracy", pair.accuracy.t_corr,
                         pair.accuracy.p_two_sided,
                         pair.accuracy.degenerate ? "  (degenerate)" : "");
      out += fmt::format("{:<34} {:<10} {:>12.6g} {:>12.6g}{}\n", name, "auc",
                         pair.auc.t_corr, pair.auc.p_two_sided,
                         pair.auc.degenerate ? "  (degenerate)" : "");
    }
  }
  return out;
}

void write_report_files(const std::string& dir, const SummaryReport& report) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create report directory '" + dir +
                  "': " + ec.message());
  }

  const fs::path base(dir);
  {
    std::ofstream out(base / "report.txt", std::ios::binary);
    if (!out) throw IoError("cannot write report.txt");
    out << render_report(report);
    if (!out.good()) throw IoError("short write on report.txt");
  }
  {
    std::ofstream out(base / "summary.csv", std::ios::binary);
    if (!out) throw IoError("cannot write summary.csv");
    out << "method,accuracy_mean,accuracy_lo,accuracy_hi,auc_mean,auc_lo,"
           "auc_hi\n";
    for (const MethodSummary& m : report.methods) {
      out << fmt::format("{},{:.6g},{:.6g},{:.6g},{:.6g},{:.6g},{:.6g}\n",
                         m.method, m.accuracy.mean, m.accuracy.lo,
                         m.accuracy.hi, m.auc.mean, m.auc.lo, m.auc.hi);
    }
    if (!out.good()) throw IoError("short write on summary.csv");
  }
  {
    std::ofstream out(base / "pairwise.csv", std::ios::binary);
    if (!out) throw IoError("cannot write pairwise.csv");
    out << "method_a,method_b,metric,t_corr,nu,p_two_sided,degenerate\n";
    for (const PairComparison& pair : report.pairs) {
      out << fmt::format("{},{},accuracy,{:.6g},{},{:.6g},{}\n", pair.method_a,
                         pair.method_b, pair.accuracy.t_corr,
                         pair.accuracy.nu, pair.accuracy.p_two_sided,
                         pair.accuracy.degenerate ? 1 : 0);
      out << fmt::format("{},{},auc,{:.6g},{},{:.6g},{}\n", pair.method_a,
                         pair.method_b, pair.auc.t_corr, pair.auc.nu,
                         pair.auc.p_two_sided, pair.auc.degenerate ? 1 : 0);
    }
    if (!out.good()) throw IoError("short write on pairwise.csv");
  }
}

}  // namespace asmmd
