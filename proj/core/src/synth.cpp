#include "asmmd/synth.hpp"

#include <cmath>

#include "asmmd/errors.hpp"
#include "asmmd/rng.hpp"

namespace asmmd {

void SynthConfig::validate() const {
  if (n_subjects < 1) throw ConfigError("synth: n_subjects must be >= 1");
  if (trials_per_subject < 1) {
    throw ConfigError("synth: trials_per_subject must be >= 1");
  }
  if (!(oddball_fraction > 0.0 && oddball_fraction < 1.0)) {
    throw ConfigError("synth: oddball_fraction must lie in (0, 1)");
  }
  if (p300_amplitude.size() != channel_names.size()) {
    throw ConfigError("synth: one amplitude per channel required");
  }
  for (double a : p300_amplitude) {
    if (!std::isfinite(a)) throw ConfigError("synth: non-finite amplitude");
  }
  if (!(p300_width_ms > 0.0)) throw ConfigError("synth: width must be > 0");
  if (noise_std < 0.0) throw ConfigError("synth: noise_std must be >= 0");
  if (!(noise_scale > 0.0)) throw ConfigError("synth: noise_scale must be > 0");
  if (!(channel_gain > 0.0)) throw ConfigError("synth: gain must be > 0");
  if (n_samples < 1) throw ConfigError("synth: n_samples must be >= 1");
  if (!(sample_rate_hz > 0.0)) {
    throw ConfigError("synth: sample_rate_hz must be > 0");
  }
  const double window_end_ms =
      window_start_ms +
      1000.0 * static_cast<double>(n_samples - 1) / sample_rate_hz;
  const double center = p300_latency_ms + latency_shift_ms;
  if (center < window_start_ms || center > window_end_ms) {
    throw ConfigError("synth: deflection center lies outside the epoch");
  }
  if (n_subjects * trials_per_subject > 0xffffffffLL) {
    throw ConfigError("synth: trial count exceeds format range");
  }
}

EpochSet synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::int64_t n_channels =
      static_cast<std::int64_t>(cfg.channel_names.size());
  const std::int64_t tps = cfg.trials_per_subject;
  const std::int64_t n_trials = cfg.n_subjects * tps;
  const std::int64_t n_odd =
      std::llround(cfg.oddball_fraction * static_cast<double>(tps));
  const double center = cfg.p300_latency_ms + cfg.latency_shift_ms;
  const double inv_two_w2 = 1.0 / (2.0 * cfg.p300_width_ms * cfg.p300_width_ms);
  const double noise = cfg.noise_std * cfg.noise_scale;

  std::vector<double> envelope(static_cast<std::size_t>(cfg.n_samples));
  for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
    const double t_ms =
        cfg.window_start_ms + 1000.0 * static_cast<double>(i) /
                                  cfg.sample_rate_hz;
    const double d = t_ms - center;
    envelope[static_cast<std::size_t>(i)] = std::exp(-d * d * inv_two_w2);
  }

  EpochSet set;
  set.n_channels = n_channels;
  set.n_samples = cfg.n_samples;
  set.channel_names = cfg.channel_names;
  set.sample_rate_hz = static_cast<float>(cfg.sample_rate_hz);
  set.data.resize(static_cast<std::size_t>(n_trials * n_channels *
                                           cfg.n_samples));
  set.labels.reserve(static_cast<std::size_t>(n_trials));
  set.subject_ids.reserve(static_cast<std::size_t>(n_trials));

  Rng rng(cfg.seed);
  float* out = set.data.data();
  for (std::int64_t s = 0; s < cfg.n_subjects; ++s) {
    std::vector<std::uint8_t> seq(static_cast<std::size_t>(tps), 0);
    for (std::int64_t i = 0; i < n_odd; ++i) {
      seq[static_cast<std::size_t>(i)] = 1;
    }
    rng.shuffle(seq);
    for (std::uint8_t y : seq) {
      set.labels.push_back(y);
      set.subject_ids.push_back(static_cast<std::uint16_t>(s + 1));
      for (std::int64_t c = 0; c < n_channels; ++c) {
        const double amp =
            y == 1 ? cfg.p300_amplitude[static_cast<std::size_t>(c)] : 0.0;
        for (std::int64_t i = 0; i < cfg.n_samples; ++i) {
          double x = noise * rng.normal();
          if (y == 1) x += amp * envelope[static_cast<std::size_t>(i)];
          *out++ = static_cast<float>(cfg.channel_gain * x +
                                      cfg.channel_offset);
        }
      }
    }
  }
  return set;
}

}  // namespace asmmd
