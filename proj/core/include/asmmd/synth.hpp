#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asmmd/epochs_io.hpp"

namespace asmmd {

/// Two-domain oddball ERP generator. A domain is one call; domain shift is
/// expressed through the gain/offset/latency/noise knobs of the second call.
struct SynthConfig {
  std::int64_t n_subjects = 40;
  std::int64_t trials_per_subject = 250;
  double oddball_fraction = 0.2;

  /// Per-channel deflection peak, microvolts. Order matches channel_names.
  std::vector<double> p300_amplitude = {2.0, 5.0, 3.5, 3.5, 2.5};
  double p300_latency_ms = 350.0;
  /// Gaussian standard deviation of the deflection envelope.
  double p300_width_ms = 250.0;
  double noise_std = 1.0;

  // Domain-shift knobs, identity by default.
  double channel_gain = 1.0;
  double channel_offset = 0.0;
  double latency_shift_ms = 0.0;
  double noise_scale = 1.0;

  std::uint64_t seed = 7;

  std::int64_t n_samples = 141;
  double window_start_ms = -100.0;
  double sample_rate_hz = 128.0;
  std::vector<std::string> channel_names = {"Fz", "Pz", "P3", "P4", "Oz"};

  void validate() const;
};

/// Oddball trials carry a Gaussian-windowed positive deflection centered at
/// p300_latency_ms + latency_shift_ms; standards are background noise only.
/// Deterministic given cfg.seed.
EpochSet synth_generate(const SynthConfig& cfg);

}  // namespace asmmd
