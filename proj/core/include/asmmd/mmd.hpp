#pragma once

#include "asmmd/autodiff.hpp"
#include "asmmd/errors.hpp"

namespace asmmd {

/// Raised by mmd2_unbiased when a batch is too small for the unbiased
/// estimator; alignment_penalty absorbs it into a zero penalty.
class SkippedAlignment : public Error {
 public:
  using Error::Error;
};

inline constexpr double kSigmaFloor = 1e-8;

struct Bandwidth {
  double sigma;
};

/// Median heuristic over the pooled sample: the median of the Euclidean
/// distances between all distinct unordered pairs of rows of s and t
/// stacked together (self-distances excluded). Even pair counts take the
/// mean of the two central order statistics; if the median falls below the
/// floor (coincident points) the floor is returned. Requires n + m >= 2.
Bandwidth median_bandwidth(const Tensor& s, const Tensor& t);

/// exp(-|u - v|^2 / (2 sigma^2)) for C-vectors u, v.
double rbf_kernel(const double* u, const double* v, std::int64_t c,
                  double sigma);

/// Unbiased squared MMD between the rows of s (n x C) and t (m x C):
///   1/(n(n-1)) sum_{i != i'} k(s_i, s_i')
/// + 1/(m(m-1)) sum_{j != j'} k(t_j, t_j')
/// - 2/(nm)     sum_{i,j}     k(s_i, t_j).
/// May be negative. Differentiable in s and t; sigma is a constant under
/// backpropagation. Throws SkippedAlignment when n < 2 or m < 2.
Value mmd2_unbiased(const Value& s, const Value& t, double sigma);

/// median_bandwidth composed with mmd2_unbiased. Batches too small for the
/// estimator yield a constant 0 with zero gradient instead of an error;
/// with clamp_at_zero, negative estimates are also replaced by that
/// constant (subgradient 0).
Value alignment_penalty(const Value& s, const Value& t,
                        bool clamp_at_zero = false);

}  // namespace asmmd
