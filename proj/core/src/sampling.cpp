#include "asmmd/sampling.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <map>

#include "asmmd/errors.hpp"

namespace asmmd {

ChannelStats zscore_fit(const EpochSet& train) {
  train.validate();
  if (train.n_trials() == 0) {
    throw ValueError("zscore_fit: empty training set");
  }
  const std::int64_t c_count = train.n_channels;
  const std::int64_t t_count = train.n_samples;
  const std::int64_t per_channel = train.n_trials() * t_count;

  ChannelStats stats;
  stats.mean.assign(static_cast<std::size_t>(c_count), 0.0);
  stats.std.assign(static_cast<std::size_t>(c_count), 0.0);
  for (std::int64_t tr = 0; tr < train.n_trials(); ++tr) {
    const float* p = train.trial(tr);
    for (std::int64_t c = 0; c < c_count; ++c) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < t_count; ++i) {
        acc += static_cast<double>(p[c * t_count + i]);
      }
      stats.mean[static_cast<std::size_t>(c)] += acc;
    }
  }
  for (double& m : stats.mean) m /= static_cast<double>(per_channel);
  for (std::int64_t tr = 0; tr < train.n_trials(); ++tr) {
    const float* p = train.trial(tr);
    for (std::int64_t c = 0; c < c_count; ++c) {
      const double m = stats.mean[static_cast<std::size_t>(c)];
      double acc = 0.0;
      for (std::int64_t i = 0; i < t_count; ++i) {
        const double d = static_cast<double>(p[c * t_count + i]) - m;
        acc += d * d;
      }
      stats.std[static_cast<std::size_t>(c)] += acc;
    }
  }
  for (std::int64_t c = 0; c < c_count; ++c) {
    double& s = stats.std[static_cast<std::size_t>(c)];
    s = std::sqrt(s / static_cast<double>(per_channel));
    if (!(s > 1e-12)) {
      throw NumericError("zscore_fit: channel " +
                         train.channel_names[static_cast<std::size_t>(c)] +
                         " has zero variance");
    }
  }
  return stats;
}

EpochSet zscore_apply(const EpochSet& set, const ChannelStats& stats) {
  set.validate();
  if (static_cast<std::int64_t>(stats.mean.size()) != set.n_channels ||
      static_cast<std::int64_t>(stats.std.size()) != set.n_channels) {
    throw ShapeError("zscore_apply: stats do not match channel count");
  }
  EpochSet out = set;
  const std::int64_t t_count = set.n_samples;
  for (std::int64_t tr = 0; tr < set.n_trials(); ++tr) {
    float* p = out.trial(tr);
    for (std::int64_t c = 0; c < set.n_channels; ++c) {
      const double m = stats.mean[static_cast<std::size_t>(c)];
      const double inv = 1.0 / stats.std[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < t_count; ++i) {
        p[c * t_count + i] = static_cast<float>(
            (static_cast<double>(p[c * t_count + i]) - m) * inv);
      }
    }
  }
  return out;
}

BudgetSpec role_budget(Role role) {
  return role == Role::source ? BudgetSpec{40, 40} : BudgetSpec{5, 5};
}

EpochSet stratified_budget_sample(const EpochSet& set, BudgetSpec budget,
                                  Rng& rng) {
  set.validate();
  if (budget.oddball < 1 || budget.standard < 1) {
    throw ValueError("budget sample: budgets must be >= 1");
  }

  std::map<std::uint16_t, std::array<std::vector<std::int64_t>, 2>> by_subject;
  for (std::int64_t t = 0; t < set.n_trials(); ++t) {
    by_subject[set.subject_ids[static_cast<std::size_t>(t)]]
              [set.labels[static_cast<std::size_t>(t)]]
                  .push_back(t);
  }

  std::vector<std::int64_t> chosen;
  for (auto& [subject, classes] : by_subject) {
    const std::int64_t want[2] = {budget.standard, budget.oddball};
    for (int y = 1; y >= 0; --y) {
      std::vector<std::int64_t>& pool = classes[static_cast<std::size_t>(y)];
      if (static_cast<std::int64_t>(pool.size()) < want[y]) {
        throw ValueError(
            "budget sample: subject " + std::to_string(subject) + " has " +
            std::to_string(pool.size()) + " " +
            (y == 1 ? "oddball" : "standard") + " trials, needs " +
            std::to_string(want[y]));
      }
      rng.shuffle(pool);
      chosen.insert(chosen.end(), pool.begin(),
                    pool.begin() + static_cast<std::ptrdiff_t>(want[y]));
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return set.subset(chosen);
}

EpochSet stratified_budget_sample(const EpochSet& set, Role role, Rng& rng) {
  return stratified_budget_sample(set, role_budget(role), rng);
}

void SplitSpec::validate() const {
  if (k_folds < 2) throw ConfigError("split spec: k_folds must be >= 2");
  if (seeds.empty()) throw ConfigError("split spec: seeds must be non-empty");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ConfigError("split spec: val_fraction must lie in [0, 1)");
  }
}

std::vector<CvSplit> cv_splits(const EpochSet& target, const SplitSpec& spec) {
  target.validate();
  spec.validate();

  std::array<std::vector<std::int64_t>, 2> by_class;
  for (std::int64_t t = 0; t < target.n_trials(); ++t) {
    by_class[target.labels[static_cast<std::size_t>(t)]].push_back(t);
  }
  for (int y = 0; y < 2; ++y) {
    if (static_cast<std::int64_t>(by_class[static_cast<std::size_t>(y)]
                                      .size()) < spec.k_folds) {
      throw ValueError("cv_splits: class " + std::to_string(y) + " has " +
                       std::to_string(
                           by_class[static_cast<std::size_t>(y)].size()) +
                       " trials, fewer than k_folds");
    }
  }

  std::vector<CvSplit> out;
  out.reserve(spec.seeds.size() * static_cast<std::size_t>(spec.k_folds));
  for (std::uint64_t seed : spec.seeds) {
    Rng rng(derive_seed(seed, "cv-folds"));
    std::array<std::vector<std::int64_t>, 2> order = by_class;
    for (auto& v : order) rng.shuffle(v);

    for (std::int64_t fold = 0; fold < spec.k_folds; ++fold) {
      CvSplit split;
      split.seed = seed;
      split.fold = fold;
      for (const auto& shuffled : order) {
        std::vector<std::int64_t> rest;
        for (std::size_t pos = 0; pos < shuffled.size(); ++pos) {
          if (static_cast<std::int64_t>(pos) % spec.k_folds == fold) {
            split.test.push_back(shuffled[pos]);
          } else {
            rest.push_back(shuffled[pos]);
          }
        }
        const std::int64_t n_val = std::llround(
            spec.val_fraction * static_cast<double>(rest.size()));
        split.val.insert(split.val.end(), rest.begin(),
                         rest.begin() + static_cast<std::ptrdiff_t>(n_val));
        split.train.insert(split.train.end(),
                           rest.begin() + static_cast<std::ptrdiff_t>(n_val),
                           rest.end());
      }
      std::sort(split.train.begin(), split.train.end());
      std::sort(split.val.begin(), split.val.end());
      std::sort(split.test.begin(), split.test.end());
      out.push_back(std::move(split));
    }
  }
  return out;
}

void augment(Tensor& batch, Rng& rng, std::int64_t jitter_max,
             double noise_std) {
  if (batch.rank() != 3) throw ShapeError("augment: expected a (B, C, T) batch");
  if (jitter_max < 0) throw ValueError("augment: jitter_max must be >= 0");
  if (noise_std < 0.0) throw ValueError("augment: noise_std must be >= 0");
  const std::int64_t b_count = batch.dim(0);
  const std::int64_t c_count = batch.dim(1);
  const std::int64_t t_count = batch.dim(2);
  if (jitter_max >= t_count) {
    throw ValueError("augment: jitter_max exceeds trial length");
  }

  for (std::int64_t b = 0; b < b_count; ++b) {
    double* trial = batch.ptr() + b * c_count * t_count;
    if (jitter_max > 0) {
      const std::int64_t offset =
          static_cast<std::int64_t>(rng.uniform_below(
              static_cast<std::uint64_t>(2 * jitter_max + 1))) -
          jitter_max;
      if (offset != 0) {
        for (std::int64_t c = 0; c < c_count; ++c) {
          double* row = trial + c * t_count;
          if (offset > 0) {
            std::memmove(row + offset, row,
                         static_cast<std::size_t>(t_count - offset) *
                             sizeof(double));
            std::fill(row, row + offset, 0.0);
          } else {
            std::memmove(row, row - offset,
                         static_cast<std::size_t>(t_count + offset) *
                             sizeof(double));
            std::fill(row + t_count + offset, row + t_count, 0.0);
          }
        }
      }
    }
    if (noise_std > 0.0) {
      for (std::int64_t i = 0; i < c_count * t_count; ++i) {
        trial[i] += rng.normal(0.0, noise_std);
      }
    }
  }
}

Tensor gather_trials(const EpochSet& set,
                     const std::vector<std::int64_t>& indices) {
  const std::int64_t b_count = static_cast<std::int64_t>(indices.size());
  Tensor out = Tensor::zeros({b_count, set.n_channels, set.n_samples});
  const std::int64_t stride = set.n_channels * set.n_samples;
  for (std::int64_t b = 0; b < b_count; ++b) {
    const std::int64_t t = indices[static_cast<std::size_t>(b)];
    if (t < 0 || t >= set.n_trials()) {
      throw ValueError("gather_trials: index out of range");
    }
    const float* src = set.trial(t);
    double* dst = out.ptr() + b * stride;
    for (std::int64_t i = 0; i < stride; ++i) {
      dst[i] = static_cast<double>(src[i]);
    }
  }
  return out;
}

std::vector<std::int64_t> labels_of(const EpochSet& set,
                                    const std::vector<std::int64_t>& indices) {
  std::vector<std::int64_t> out;
  out.reserve(indices.size());
  for (std::int64_t t : indices) {
    if (t < 0 || t >= set.n_trials()) {
      throw ValueError("labels_of: index out of range");
    }
    out.push_back(set.labels[static_cast<std::size_t>(t)]);
  }
  return out;
}

std::vector<std::int64_t> all_indices(const EpochSet& set) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(set.n_trials()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    idx[i] = static_cast<std::int64_t>(i);
  }
  return idx;
}

EpochSet concat(const EpochSet& a, const EpochSet& b) {
  a.validate();
  b.validate();
  if (a.n_channels != b.n_channels || a.n_samples != b.n_samples ||
      a.channel_names != b.channel_names ||
      a.sample_rate_hz != b.sample_rate_hz) {
    throw ShapeError("concat: sets have different geometry");
  }
  EpochSet out = a;
  out.data.insert(out.data.end(), b.data.begin(), b.data.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.subject_ids.insert(out.subject_ids.end(), b.subject_ids.begin(),
                         b.subject_ids.end());
  if (a.domain_tag != b.domain_tag) out.domain_tag = DomainTag::unset;
  return out;
}

std::vector<std::uint8_t> labels_from_event_codes(
    const std::vector<std::int64_t>& codes) {
  std::vector<std::uint8_t> labels;
  labels.reserve(codes.size());
  for (std::int64_t code : codes) {
    const bool diagonal = code == 11 || code == 22 || code == 33 ||
                          code == 44 || code == 55;
    labels.push_back(diagonal ? 1 : 0);
  }
  return labels;
}

}  // namespace asmmd
