#include "asmmd/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>

#include "asmmd/errors.hpp"

namespace asmmd {

double auc(const std::vector<double>& scores,
           const std::vector<std::int64_t>& labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("auc: scores and labels differ in length");
  }
  const std::size_t n = scores.size();
  std::int64_t n_pos = 0;
  for (std::int64_t y : labels) {
    if (y != 0 && y != 1) throw ValueError("auc: labels must be 0 or 1");
    n_pos += y;
  }
  const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw NumericError("auc: needs both classes present");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return scores[i] < scores[j];
  });

  // Sum of average ranks over the positive class. Ranks are half-integers,
  // so every partial sum is exact in double precision.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }

  const double u = rank_sum_pos -
                   0.5 * static_cast<double>(n_pos) *
                       static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {

// Continued fraction for the regularized incomplete beta function,
// evaluated with the modified Lentz algorithm.
double beta_cf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double rel_eps = 1e-15;
  constexpr int max_iter = 500;

  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const double dm = static_cast<double>(m);
    double num = dm * (b - dm) * x / ((a + 2.0 * dm - 1.0) * (a + 2.0 * dm));
    d = 1.0 + num * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    num = -(a + dm) * (a + b + dm) * x /
          ((a + 2.0 * dm) * (a + 2.0 * dm + 1.0));
    d = 1.0 + num * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < rel_eps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

double reg_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = a * std::log(x) + b * std::log1p(-x) -
                          (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cf(a, b, x) / a;
  }
  return 1.0 - std::exp(b * std::log1p(-x) + a * std::log(x) -
                        (std::lgamma(a) + std::lgamma(b) -
                         std::lgamma(a + b))) *
                   beta_cf(b, a, 1.0 - x) / b;
}

}  // namespace

double t_cdf(double x, std::int64_t nu) {
  if (nu < 1) throw ValueError("t_cdf: nu must be >= 1");
  if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(x)) return x > 0.0 ? 1.0 : 0.0;
  const double dn = static_cast<double>(nu);
  const double z = dn / (dn + x * x);
  const double tail = 0.5 * reg_incomplete_beta(0.5 * dn, 0.5, z);
  return x >= 0.0 ? 1.0 - tail : tail;
}

double t_quantile(double p, std::int64_t nu) {
  if (nu < 1) throw ValueError("t_quantile: nu must be >= 1");
  if (!(p > 0.0 && p < 1.0)) {
    throw ValueError("t_quantile: p must lie strictly inside (0, 1)");
  }
  if (p == 0.5) return 0.0;

  double lo = -1.0;
  double hi = 1.0;
  while (t_cdf(lo, nu) > p) lo *= 2.0;
  while (t_cdf(hi, nu) < p) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (t_cdf(mid, nu) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

TInterval t_ci(const std::vector<double>& values, double level) {
  const std::int64_t k = static_cast<std::int64_t>(values.size());
  if (k < 2) throw ValueError("t_ci: needs at least two values");
  if (!(level > 0.0 && level < 1.0)) {
    throw ValueError("t_ci: level must lie strictly inside (0, 1)");
  }
  const double kd = static_cast<double>(k);
  const double mean =
      std::accumulate(values.begin(), values.end(), 0.0) / kd;
  double ss = 0.0;
  for (double v : values) {
    const double d = v - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / (kd - 1.0));
  const double tq = t_quantile(0.5 * (1.0 + level), k - 1);
  const double margin = tq * sd / std::sqrt(kd);
  return {mean, mean - margin, mean + margin};
}

CorrectedTest corrected_paired_ttest(const std::vector<double>& a,
                                     const std::vector<double>& b,
                                     const PairedDesign& design) {
  if (a.size() != b.size()) {
    throw ShapeError("corrected_paired_ttest: score vectors differ in length");
  }
  const std::int64_t k_total = design.k_folds * design.r_seeds;
  if (static_cast<std::int64_t>(a.size()) != k_total) {
    throw ValueError("corrected_paired_ttest: expected k_folds*r_seeds scores");
  }
  if (k_total < 2) {
    throw ValueError("corrected_paired_ttest: needs at least two replicates");
  }
  if (design.n_train < 1 || design.n_test < 1) {
    throw ValueError("corrected_paired_ttest: train/test sizes must be >= 1");
  }

  const double kd = static_cast<double>(k_total);
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double dbar = std::accumulate(d.begin(), d.end(), 0.0) / kd;
  double ss = 0.0;
  for (double v : d) {
    const double e = v - dbar;
    ss += e * e;
  }
  const double var_d = ss / (kd - 1.0);

  CorrectedTest out;
  out.nu = k_total - 1;
  if (var_d == 0.0) {
    out.degenerate = true;
    if (dbar == 0.0) {
      out.t_corr = 0.0;
      out.p_two_sided = 1.0;
    } else {
      out.t_corr = std::copysign(
          std::numeric_limits<double>::infinity(), dbar);
      out.p_two_sided = 0.0;
    }
    return out;
  }

  const double gamma = 1.0 / kd + static_cast<double>(design.n_test) /
                                      static_cast<double>(design.n_train);
  out.degenerate = false;
  out.t_corr = dbar / std::sqrt(gamma * var_d);
  out.p_two_sided = 2.0 * (1.0 - t_cdf(std::fabs(out.t_corr), out.nu));
  return out;
}

}  // namespace asmmd
