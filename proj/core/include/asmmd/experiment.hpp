#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "asmmd/conformer.hpp"
#include "asmmd/epochs_io.hpp"
#include "asmmd/stats.hpp"
#include "asmmd/synth.hpp"
#include "asmmd/trainer.hpp"

namespace asmmd {

inline constexpr const char* kVersion = "0.1.0";

/// Methods understood by the experiment runner, in canonical order. A
/// method's position in this list seeds its private RNG streams, so running
/// a subset reproduces the corresponding rows of the full matrix.
const std::vector<std::string>& known_methods();

/// Full run configuration. Every key in the `key = value` config file maps
/// onto one field here; defaults are the protocol values.
struct ExperimentConfig {
  std::string source_path;  // empty: generate the source domain
  std::string target_path;  // empty: generate the target domain
  std::string out_dir = "results";
  std::vector<std::string> methods = {"asmmd", "pooled", "target_only"};

  std::int64_t k_folds = 5;
  std::vector<std::uint64_t> seeds = {42, 123, 456, 789, 321};
  double val_fraction = 0.2;

  std::int64_t warmup_epochs = 40;
  std::int64_t max_epochs = 300;
  double lambda0 = 0.4;
  double clip_lo = 1.0;
  double clip_hi = 6.0;
  double label_smoothing = 0.1;

  TrainerOptions trainer;
  BackboneConfig backbone;  // n_channels / n_samples are taken from the data

  std::int64_t source_oddball_per_subject = 40;
  std::int64_t source_standard_per_subject = 40;
  std::int64_t target_oddball_per_subject = 5;
  std::int64_t target_standard_per_subject = 5;

  SynthConfig synth;  // source-domain generator settings
  std::uint64_t synth_target_seed = 8;
  double synth_target_gain = 1.0;
  double synth_target_offset = 0.0;
  double synth_target_latency_shift_ms = 0.0;
  double synth_target_noise_scale = 1.0;

  void validate() const;
};

/// Parse `key = value` lines with `#` comments. Unknown or duplicate keys
/// and malformed values raise ConfigError.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

std::vector<std::uint64_t> parse_seed_list(const std::string& csv);
std::vector<std::string> parse_method_list(const std::string& csv);

/// Every config key with its effective value, in canonical key order.
std::vector<std::pair<std::string, std::string>> render_config(
    const ExperimentConfig& cfg);

/// FNV-1a over the canonical rendering, 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

SynthConfig source_synth_config(const ExperimentConfig& cfg);
SynthConfig target_synth_config(const ExperimentConfig& cfg);

struct DomainData {
  EpochSet source;
  EpochSet target;
};

/// Read or synthesize both domains, tag them, and check their geometry.
DomainData load_domains(const ExperimentConfig& cfg);

struct ReplicateScore {
  std::string method;
  std::int64_t fold = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double auc = 0.0;
};

struct ReplicateSpec {
  std::string method;
  std::uint64_t seed = 0;
  std::int64_t fold = 0;
};

struct ReplicateOutput {
  ReplicateScore score;
  RunRecord record;
};

/// One (method, seed, fold) replicate: per-seed budget sampling, the seed's
/// CV split, per-domain-train z-scoring, model build, training, evaluation
/// on the target test fold. Model init depends on (seed, fold) only, so all
/// methods of a replicate start from identical weights.
ReplicateOutput run_replicate(const ExperimentConfig& cfg,
                              const DomainData& data,
                              const ReplicateSpec& spec);

struct SingleRun {
  ReplicateScore score;
  RunRecord record;
  Model model;
};

/// run_replicate that also hands back the trained model (train command).
SingleRun run_single(const ExperimentConfig& cfg, const DomainData& data,
                     const ReplicateSpec& spec);

struct ExperimentResult {
  std::vector<ReplicateScore> rows;  // method-major, then fold, then seed
  std::int64_t n_failed = 0;
};

/// Run the full method x seed x fold matrix on `workers` threads, write
/// out_dir/results.csv and one epoch-history log per replicate. Failed
/// replicates become NaN rows; the run continues.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                std::int64_t workers,
                                const std::string& out_dir);

void write_results_csv(const std::string& path,
                       const std::vector<ReplicateScore>& rows,
                       const std::string& hash,
                       const std::vector<std::uint64_t>& seeds);

struct ResultsFile {
  std::vector<ReplicateScore> rows;
  std::string config_hash;  // empty when the file carries no provenance
  std::string version;
};

ResultsFile read_results_csv(const std::string& path);

struct MethodSummary {
  std::string method;
  TInterval accuracy;
  TInterval auc;
};

struct PairComparison {
  std::string method_a;
  std::string method_b;
  CorrectedTest accuracy;
  CorrectedTest auc;
};

struct SummaryReport {
  PairedDesign design;
  std::vector<MethodSummary> methods;   // first-appearance order
  std::vector<PairComparison> pairs;    // all unordered method pairs
  std::string config_hash;
};

/// Aggregate matched replicates: per-method 95% t-intervals and pairwise
/// corrected resampled paired t-tests on both metrics. Replicate sets must
/// be rectangular and matched across methods; the error lists any missing
/// (fold, seed) pairs.
SummaryReport build_report(const std::vector<ReplicateScore>& rows,
                           std::int64_t n_train, std::int64_t n_test);

std::string render_report(const SummaryReport& report);

/// report.txt plus machine-readable summary.csv / pairwise.csv.
void write_report_files(const std::string& dir, const SummaryReport& report);

}  // namespace asmmd
