#include "asmmd/epochs_io.hpp"

#include <cstring>
#include <fstream>
#include <limits>

#include "wire.hpp"

namespace asmmd {

void EpochSet::validate() const {
  const std::int64_t trials = n_trials();
  if (n_channels < 0 || n_samples < 0) {
    throw ValueError("epoch set: negative extents");
  }
  if (static_cast<std::int64_t>(data.size()) !=
      trials * n_channels * n_samples) {
    throw ShapeError("epoch set: data length does not match " +
                     std::to_string(trials) + "x" +
                     std::to_string(n_channels) + "x" +
                     std::to_string(n_samples));
  }
  if (static_cast<std::int64_t>(subject_ids.size()) != trials) {
    throw ShapeError("epoch set: subject_ids length mismatch");
  }
  if (static_cast<std::int64_t>(channel_names.size()) != n_channels) {
    throw ShapeError("epoch set: channel_names length mismatch");
  }
  for (std::uint8_t y : labels) {
    if (y > 1) throw ValueError("epoch set: labels must be 0 or 1");
  }
  for (const std::string& name : channel_names) {
    if (name.empty() || name.size() > 255) {
      throw ValueError("epoch set: channel name length must be 1..255");
    }
    for (char c : name) {
      if (c < 0x20 || c > 0x7e) {
        throw ValueError("epoch set: channel names must be printable ASCII");
      }
    }
  }
  if (!(sample_rate_hz > 0.0f)) {
    throw ValueError("epoch set: sample rate must be positive");
  }
}

EpochSet EpochSet::subset(const std::vector<std::int64_t>& indices) const {
  EpochSet out;
  out.n_channels = n_channels;
  out.n_samples = n_samples;
  out.channel_names = channel_names;
  out.sample_rate_hz = sample_rate_hz;
  out.domain_tag = domain_tag;
  const std::int64_t stride = n_channels * n_samples;
  out.data.resize(static_cast<std::size_t>(indices.size()) *
                  static_cast<std::size_t>(stride));
  out.labels.reserve(indices.size());
  out.subject_ids.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::int64_t t = indices[i];
    if (t < 0 || t >= n_trials()) {
      throw ValueError("epoch set: subset index " + std::to_string(t) +
                       " out of range");
    }
    std::memcpy(out.data.data() + static_cast<std::int64_t>(i) * stride,
                trial(t), static_cast<std::size_t>(stride) * sizeof(float));
    out.labels.push_back(labels[static_cast<std::size_t>(t)]);
    out.subject_ids.push_back(subject_ids[static_cast<std::size_t>(t)]);
  }
  return out;
}

namespace {

constexpr char kMagic[4] = {'A', 'S', 'M', 'D'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void write_epochs(const std::string& path, const EpochSet& set) {
  set.validate();
  const std::int64_t trials = set.n_trials();
  if (trials > std::numeric_limits<std::uint32_t>::max() ||
      set.n_channels > std::numeric_limits<std::uint32_t>::max() ||
      set.n_samples > std::numeric_limits<std::uint32_t>::max()) {
    throw ValueError("write_epochs: extents exceed the format's u32 range");
  }

  std::string buf;
  buf.reserve(32 + set.data.size() * 4 + set.labels.size() * 3);
  buf.append(kMagic, 4);
  wire::put_u32(buf, kVersion);
  wire::put_u32(buf, static_cast<std::uint32_t>(trials));
  wire::put_u32(buf, static_cast<std::uint32_t>(set.n_channels));
  wire::put_u32(buf, static_cast<std::uint32_t>(set.n_samples));
  wire::put_f32(buf, set.sample_rate_hz);
  for (const std::string& name : set.channel_names) {
    wire::put_u8(buf, static_cast<std::uint8_t>(name.size()));
    buf.append(name);
  }
  for (std::uint8_t y : set.labels) wire::put_u8(buf, y);
  for (std::uint16_t s : set.subject_ids) wire::put_u16(buf, s);
  for (float v : set.data) wire::put_f32(buf, v);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_epochs: cannot open " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write_epochs: short write to " + path);
}

EpochSet read_epochs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_epochs: cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read_epochs: read failure on " + path);

  wire::Cursor cur(buf, path);
  const std::string magic = cur.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw BadMagicError(path + ": bad magic, not an EPOCHS-v1 file");
  }
  const std::uint32_t version = cur.u32();
  if (version != kVersion) {
    throw BadVersionError(path + ": unsupported EPOCHS version " +
                          std::to_string(version));
  }
  const std::uint64_t n_trials = cur.u32();
  const std::uint64_t n_channels = cur.u32();
  const std::uint64_t n_samples = cur.u32();

  EpochSet set;
  set.n_channels = static_cast<std::int64_t>(n_channels);
  set.n_samples = static_cast<std::int64_t>(n_samples);
  set.sample_rate_hz = cur.f32();
  set.channel_names.reserve(n_channels);
  for (std::uint64_t c = 0; c < n_channels; ++c) {
    const std::uint8_t len = cur.u8();
    set.channel_names.push_back(cur.bytes(len));
  }
  set.labels.reserve(n_trials);
  for (std::uint64_t t = 0; t < n_trials; ++t) set.labels.push_back(cur.u8());
  set.subject_ids.reserve(n_trials);
  for (std::uint64_t t = 0; t < n_trials; ++t) {
    set.subject_ids.push_back(cur.u16());
  }
  const std::uint64_t n_values = n_trials * n_channels * n_samples;
  set.data.reserve(n_values);
  for (std::uint64_t i = 0; i < n_values; ++i) set.data.push_back(cur.f32());

  if (cur.remaining() != 0) {
    throw FormatError(path + ": " + std::to_string(cur.remaining()) +
                      " trailing bytes after EPOCHS-v1 payload");
  }
  set.validate();
  return set;
}

}  // namespace asmmd
