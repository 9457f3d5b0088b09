#pragma once

#include <cstdint>
#include <vector>

namespace asmmd {

/// Mann-Whitney AUC of class-1 scores against binary labels:
/// (#(pos > neg) + 0.5 #(pos == neg)) / (n_pos * n_neg).
/// Rank-based, O(n log n), exact for the half-integer tie counts.
/// Throws NumericError when only one class is present.
double auc(const std::vector<double>& scores,
           const std::vector<std::int64_t>& labels);

/// Student-t CDF computed through the regularized incomplete beta function.
double t_cdf(double x, std::int64_t nu);

/// Inverse of t_cdf by bisection; p in (0, 1).
double t_quantile(double p, std::int64_t nu);

struct TInterval {
  double mean;
  double lo;
  double hi;
};

/// Two-sided Student-t confidence interval,
/// mean +- t_{(1+level)/2, K-1} * s / sqrt(K). Needs K >= 2.
TInterval t_ci(const std::vector<double>& values, double level = 0.95);

struct PairedDesign {
  std::int64_t k_folds = 5;
  std::int64_t r_seeds = 5;
  std::int64_t n_train = 320;
  std::int64_t n_test = 80;
};

struct CorrectedTest {
  double t_corr;
  std::int64_t nu;
  double p_two_sided;
  bool degenerate;  // zero-variance differences
};

/// Corrected resampled paired t-test over K = k*r matched scores:
/// rho = n_test/n_train, gamma = 1/(kr) + rho, t = dbar / sqrt(gamma s_d^2),
/// nu = K-1. Zero-variance differences yield the boundary p-value (0 when
/// the means differ, 1 when they are equal) with the degenerate flag set.
CorrectedTest corrected_paired_ttest(const std::vector<double>& a,
                                     const std::vector<double>& b,
                                     const PairedDesign& design);

}  // namespace asmmd
