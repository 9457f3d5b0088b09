#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asmmd/errors.hpp"

namespace asmmd {

enum class DomainTag : std::uint8_t { unset, source, target };

/// A set of fixed-length EEG trials, trial-major then channel then sample.
struct EpochSet {
  std::int64_t n_channels = 0;
  std::int64_t n_samples = 0;
  std::vector<float> data;
  std::vector<std::uint8_t> labels;  // 0 = standard, 1 = oddball
  std::vector<std::uint16_t> subject_ids;
  std::vector<std::string> channel_names;
  float sample_rate_hz = 128.0f;
  DomainTag domain_tag = DomainTag::unset;

  std::int64_t n_trials() const {
    return static_cast<std::int64_t>(labels.size());
  }

  const float* trial(std::int64_t t) const {
    return data.data() + t * n_channels * n_samples;
  }
  float* trial(std::int64_t t) {
    return data.data() + t * n_channels * n_samples;
  }

  /// Checks extent consistency, label range, and channel-name sanity.
  void validate() const;

  /// Gathers the given trials into a new set; metadata is preserved.
  EpochSet subset(const std::vector<std::int64_t>& indices) const;
};

struct BadMagicError : FormatError {
  using FormatError::FormatError;
};
struct BadVersionError : FormatError {
  using FormatError::FormatError;
};
struct TruncatedError : FormatError {
  using FormatError::FormatError;
};

/// EPOCHS-v1, little-endian: magic "ASMD", version u32 = 1, n_trials,
/// n_channels, n_samples u32, sample_rate f32, channel table of
/// (len u8, ASCII bytes), labels u8, subject_ids u16, data f32. No padding.
void write_epochs(const std::string& path, const EpochSet& set);

/// Strict reader: rejects bad magic, unknown versions, short payloads, and
/// trailing bytes. Round trips are bitwise exact.
EpochSet read_epochs(const std::string& path);

}  // namespace asmmd
