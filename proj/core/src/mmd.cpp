#include "asmmd/mmd.hpp"

#include <algorithm>
#include <cmath>

namespace asmmd {

namespace {

void check_logit_matrix(const char* op, const Tensor& x) {
  if (x.rank() != 2)
    throw ShapeError(std::string(op) + ": expected n x C matrix, got " +
                     shape_str(x.shape));
  if (x.dim(1) < 1)
    throw ShapeError(std::string(op) + ": need at least one column");
  if (!x.all_finite())
    throw NumericError(std::string(op) + ": non-finite logits");
}

double sq_dist(const double* u, const double* v, std::int64_t c) {
  double s = 0.0;
  for (std::int64_t i = 0; i < c; ++i) {
    const double d = u[i] - v[i];
    s += d * d;
  }
  return s;
}

}  // namespace

Bandwidth median_bandwidth(const Tensor& s, const Tensor& t) {
  check_logit_matrix("median_bandwidth", s);
  check_logit_matrix("median_bandwidth", t);
  if (s.dim(1) != t.dim(1))
    throw ShapeError("median_bandwidth: column mismatch " +
                     shape_str(s.shape) + " vs " + shape_str(t.shape));
  const std::int64_t n = s.dim(0), m = t.dim(0), c = s.dim(1);
  const std::int64_t total = n + m;
  if (total < 2)
    throw ValueError("median_bandwidth: need at least 2 points, got " +
                     std::to_string(total));
  const auto row = [&](std::int64_t i) {
    return i < n ? s.ptr() + i * c : t.ptr() + (i - n) * c;
  };
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(total * (total - 1) / 2));
  for (std::int64_t i = 0; i < total; ++i)
    for (std::int64_t j = i + 1; j < total; ++j)
      dist.push_back(std::sqrt(sq_dist(row(i), row(j), c)));
  std::sort(dist.begin(), dist.end());
  const std::size_t p = dist.size();
  double med;
  if (p % 2 == 1)
    med = dist[p / 2];
  else
    med = 0.5 * (dist[p / 2 - 1] + dist[p / 2]);
  return Bandwidth{std::max(med, kSigmaFloor)};
}

double rbf_kernel(const double* u, const double* v, std::int64_t c,
                  double sigma) {
  if (sigma <= 0.0) throw ValueError("rbf_kernel: sigma must be positive");
  return std::exp(-sq_dist(u, v, c) / (2.0 * sigma * sigma));
}

Value mmd2_unbiased(const Value& s, const Value& t, double sigma) {
  const Tensor& st = s.val();
  const Tensor& tt = t.val();
  check_logit_matrix("mmd2_unbiased", st);
  check_logit_matrix("mmd2_unbiased", tt);
  if (st.dim(1) != tt.dim(1))
    throw ShapeError("mmd2_unbiased: column mismatch " + shape_str(st.shape) +
                     " vs " + shape_str(tt.shape));
  if (sigma <= 0.0) throw ValueError("mmd2_unbiased: sigma must be positive");
  const std::int64_t n = st.dim(0), m = tt.dim(0), c = st.dim(1);
  if (n < 2 || m < 2)
    throw SkippedAlignment("mmd2_unbiased: unbiased estimator needs n >= 2 "
                           "and m >= 2, got n=" +
                           std::to_string(n) + " m=" + std::to_string(m));

  Tensor kss = Tensor::zeros({n, n});
  Tensor ktt = Tensor::zeros({m, m});
  Tensor kst = Tensor::zeros({n, m});
  double sum_ss = 0.0, sum_tt = 0.0, sum_st = 0.0;
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = i + 1; j < n; ++j) {
      const double k = rbf_kernel(st.ptr() + i * c, st.ptr() + j * c, c, sigma);
      kss.at(i, j) = k;
      kss.at(j, i) = k;
      sum_ss += k;
    }
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = i + 1; j < m; ++j) {
      const double k = rbf_kernel(tt.ptr() + i * c, tt.ptr() + j * c, c, sigma);
      ktt.at(i, j) = k;
      ktt.at(j, i) = k;
      sum_tt += k;
    }
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) {
      const double k = rbf_kernel(st.ptr() + i * c, tt.ptr() + j * c, c, sigma);
      kst.at(i, j) = k;
      sum_st += k;
    }
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  const double value = 2.0 * sum_ss / (nn * (nn - 1.0)) +
                       2.0 * sum_tt / (mm * (mm - 1.0)) -
                       2.0 * sum_st / (nn * mm);

  return make_op(
      Tensor::scalar(value), {s, t}, "mmd2_unbiased",
      [kss = std::move(kss), ktt = std::move(ktt), kst = std::move(kst), n, m,
       c, sigma](Node& self) {
        const double g = self.grad[0];
        const double inv_s2 = 1.0 / (sigma * sigma);
        const double nn = static_cast<double>(n), mm = static_cast<double>(m);
        const double c_ss = 2.0 / (nn * (nn - 1.0)) * inv_s2;
        const double c_tt = 2.0 / (mm * (mm - 1.0)) * inv_s2;
        const double c_st = 2.0 / (nn * mm) * inv_s2;
        const double* sp = self.parents[0].val().ptr();
        const double* tp = self.parents[1].val().ptr();
        if (self.parents[0].requires_grad()) {
          double* ds = self.parents[0].raw()->ensure_grad().ptr();
          for (std::int64_t i = 0; i < n; ++i) {
            double* di = ds + i * c;
            const double* si = sp + i * c;
            for (std::int64_t q = 0; q < n; ++q) {
              if (q == i) continue;
              const double w = g * c_ss * kss.at(i, q);
              const double* sq = sp + q * c;
              for (std::int64_t d = 0; d < c; ++d)
                di[d] -= w * (si[d] - sq[d]);
            }
            for (std::int64_t j = 0; j < m; ++j) {
              const double w = g * c_st * kst.at(i, j);
              const double* tj = tp + j * c;
              for (std::int64_t d = 0; d < c; ++d)
                di[d] += w * (si[d] - tj[d]);
            }
          }
        }
        if (self.parents[1].requires_grad()) {
          double* dt = self.parents[1].raw()->ensure_grad().ptr();
          for (std::int64_t j = 0; j < m; ++j) {
            double* dj = dt + j * c;
            const double* tj = tp + j * c;
            for (std::int64_t q = 0; q < m; ++q) {
              if (q == j) continue;
              const double w = g * c_tt * ktt.at(j, q);
              const double* tq = tp + q * c;
              for (std::int64_t d = 0; d < c; ++d)
                dj[d] -= w * (tj[d] - tq[d]);
            }
            for (std::int64_t i = 0; i < n; ++i) {
              const double w = g * c_st * kst.at(i, j);
              const double* si = sp + i * c;
              for (std::int64_t d = 0; d < c; ++d)
                dj[d] += w * (tj[d] - si[d]);
            }
          }
        }
      });
}

Value alignment_penalty(const Value& s, const Value& t, bool clamp_at_zero) {
  const Tensor& st = s.val();
  const Tensor& tt = t.val();
  check_logit_matrix("alignment_penalty", st);
  check_logit_matrix("alignment_penalty", tt);
  if (st.dim(0) < 2 || tt.dim(0) < 2)
    return Value::leaf(Tensor::scalar(0.0), false, "alignment_skipped");
  const Bandwidth bw = median_bandwidth(st, tt);
  Value penalty = mmd2_unbiased(s, t, bw.sigma);
  if (clamp_at_zero && penalty.val()[0] < 0.0)
    return Value::leaf(Tensor::scalar(0.0), false, "alignment_clamped");
  return penalty;
}

}  // namespace asmmd
