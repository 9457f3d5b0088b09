#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "asmmd/epochs_io.hpp"
#include "asmmd/errors.hpp"
#include "asmmd/experiment.hpp"
#include "asmmd/log.hpp"
#include "asmmd/synth.hpp"

namespace fs = std::filesystem;
using namespace asmmd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitReplicateFailures = 1;
constexpr int kExitUsage = 2;

void print_class_counts(const std::string& label, const std::string& path,
                        const EpochSet& set) {
  std::map<std::uint16_t, std::pair<std::int64_t, std::int64_t>> counts;
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    auto& entry = counts[set.subject_ids[i]];
    if (set.labels[i] == 1) {
      ++entry.first;
    } else {
      ++entry.second;
    }
  }
  fmt::print("{}: {} ({} trials, {} subjects, {} channels x {} samples)\n",
             label, path, set.n_trials(), counts.size(), set.n_channels,
             set.n_samples);
  for (const auto& [subject, entry] : counts) {
    fmt::print("  subject {:>3}: {} oddball, {} standard\n", subject,
               entry.first, entry.second);
  }
}

ExperimentConfig resolve_config(const std::string& config_path,
                                const std::string& methods_csv,
                                const std::string& seeds_csv) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  if (!methods_csv.empty()) cfg.methods = parse_method_list(methods_csv);
  if (!seeds_csv.empty()) cfg.seeds = parse_seed_list(seeds_csv);
  return cfg;
}

int cmd_synth(const std::string& config_path, const std::string& out_source,
              const std::string& out_target) {
  ExperimentConfig cfg = resolve_config(config_path, "", "");
  EpochSet source = synth_generate(source_synth_config(cfg));
  source.domain_tag = DomainTag::source;
  EpochSet target = synth_generate(target_synth_config(cfg));
  target.domain_tag = DomainTag::target;
  write_epochs(out_source, source);
  write_epochs(out_target, target);
  fmt::print("config_hash: {}\n", config_hash(cfg));
  print_class_counts("source", out_source, source);
  print_class_counts("target", out_target, target);
  return kExitOk;
}

void write_history_csv(const std::string& path, const RunRecord& record,
                       const std::string& hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << fmt::format("# config_hash={}\n", hash);
  out << "epoch,mean_loss,w_t,lambda_mmd,lr,val_accuracy\n";
  for (const EpochStats& row : record.history) {
    out << fmt::format("{},{:.6g},{:.6g},{:.6g},{:.6g},{:.6g}\n", row.epoch,
                       row.mean_loss, row.w_t, row.lambda_mmd, row.lr,
                       row.val_accuracy);
  }
  if (!out.good()) throw IoError("short write on " + path);
}

int cmd_train(const std::string& config_path, const std::string& out_flag,
              const std::string& methods_csv, const std::string& seeds_csv) {
  ExperimentConfig cfg = resolve_config(config_path, methods_csv, seeds_csv);
  cfg.validate();
  const std::string out_dir = out_flag.empty() ? cfg.out_dir : out_flag;
  const std::string hash = config_hash(cfg);

  DomainData data = load_domains(cfg);
  ReplicateSpec spec{cfg.methods[0], cfg.seeds[0], 0};
  fmt::print("config_hash: {}\n", hash);
  fmt::print("training {} (seed {}, fold {})\n", spec.method, spec.seed,
             spec.fold);
  SingleRun run = run_single(cfg, data, spec);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create output directory '" + out_dir +
                  "': " + ec.message());
  }
  const std::string ckpt = (fs::path(out_dir) / "model.asmc").string();
  run.model.save_checkpoint(ckpt);
  write_history_csv((fs::path(out_dir) / "history.csv").string(), run.record,
                    hash);

  fmt::print(
      "{} seed {} fold {}: accuracy {:.6g}, auc {:.6g} "
      "({} epochs, best epoch {})\n",
      spec.method, spec.seed, spec.fold, run.score.accuracy, run.score.auc,
      run.record.epochs_run, run.record.best_epoch);
  fmt::print("checkpoint: {}\n", ckpt);
  return kExitOk;
}

int cmd_experiment(const std::string& config_path, const std::string& out_flag,
                   std::int64_t workers, const std::string& methods_csv,
                   const std::string& seeds_csv) {
  ExperimentConfig cfg = resolve_config(config_path, methods_csv, seeds_csv);
  cfg.validate();
  const std::string out_dir = out_flag.empty() ? cfg.out_dir : out_flag;
  fmt::print("config_hash: {}\n", config_hash(cfg));
  ExperimentResult result = run_experiment(cfg, workers, out_dir);
  fmt::print("wrote {} replicate rows to {}/results.csv ({} failed)\n",
             result.rows.size(), out_dir, result.n_failed);
  return result.n_failed > 0 ? kExitReplicateFailures : kExitOk;
}

void parse_design(const std::string& design, std::int64_t& n_train,
                  std::int64_t& n_test) {
  if (design.empty()) return;
  std::size_t start = 0;
  while (start <= design.size()) {
    std::size_t comma = design.find(',', start);
    std::string item = design.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    std::size_t eq = item.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--design items must look like n_train=320");
    }
    auto trim = [](std::string s) {
      const char* ws = " \t";
      std::size_t a = s.find_first_not_of(ws);
      std::size_t b = s.find_last_not_of(ws);
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(item.substr(0, eq));
    std::string value = trim(item.substr(eq + 1));
    std::int64_t parsed = 0;
    try {
      parsed = std::stoll(value);
    } catch (const std::exception&) {
      throw ConfigError("--design value for '" + key + "' is not an integer");
    }
    if (key == "n_train") {
      n_train = parsed;
    } else if (key == "n_test") {
      n_test = parsed;
    } else {
      throw ConfigError("--design: unknown key '" + key + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
}

int cmd_report(const std::string& results_path, const std::string& design,
               const std::string& out_dir) {
  std::int64_t n_train = 320;
  std::int64_t n_test = 80;
  parse_design(design, n_train, n_test);
  ResultsFile results = read_results_csv(results_path);
  SummaryReport report = build_report(results.rows, n_train, n_test);
  report.config_hash = results.config_hash;
  fmt::print("{}", render_report(report));
  if (!out_dir.empty()) {
    write_report_files(out_dir, report);
    fmt::print("\nwrote report.txt, summary.csv, pairwise.csv to {}\n",
               out_dir);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AS-MMD cross-domain ERP training toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_flag;
  std::string methods_csv;
  std::string seeds_csv;
  std::string out_source = "source.epochs";
  std::string out_target = "target.epochs";
  std::string results_path;
  std::string design;
  std::int64_t workers = 1;

  CLI::App* synth =
      app.add_subcommand("synth", "Generate both synthetic domains");
  synth->add_option("--config", config_path, "Run configuration file");
  synth->add_option("--out-source", out_source, "Source domain output path");
  synth->add_option("--out-target", out_target, "Target domain output path");

  CLI::App* train = app.add_subcommand(
      "train", "Run a single replicate (first method, first seed, fold 0)");
  train->add_option("--config", config_path, "Run configuration file");
  train->add_option("--out", out_flag, "Output directory");
  train->add_option("--methods", methods_csv, "Override the method list");
  train->add_option("--seed-list", seeds_csv, "Override the seed list");

  CLI::App* experiment = app.add_subcommand(
      "experiment", "Run the full method x seed x fold matrix");
  experiment->add_option("--config", config_path, "Run configuration file");
  experiment->add_option("--out", out_flag, "Output directory");
  experiment->add_option("--workers", workers, "Worker thread count");
  experiment->add_option("--methods", methods_csv, "Override the method list");
  experiment->add_option("--seed-list", seeds_csv, "Override the seed list");

  CLI::App* report =
      app.add_subcommand("report", "Summarize a results.csv table");
  report->add_option("--results", results_path, "Path to results.csv")
      ->required();
  report->add_option("--design", design,
                     "Per-fold sizes, e.g. n_train=320,n_test=80");
  report->add_option("--out", out_flag, "Directory for report files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (app.got_subcommand(synth)) {
      return cmd_synth(config_path, out_source, out_target);
    }
    if (app.got_subcommand(train)) {
      return cmd_train(config_path, out_flag, methods_csv, seeds_csv);
    }
    if (app.got_subcommand(experiment)) {
      return cmd_experiment(config_path, out_flag, workers, methods_csv,
                            seeds_csv);
    }
    if (app.got_subcommand(report)) {
      return cmd_report(results_path, design, out_flag);
    }
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
