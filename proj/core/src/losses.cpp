#include "asmmd/losses.hpp"

#include <cmath>

#include "asmmd/errors.hpp"
#include "asmmd/mmd.hpp"

namespace asmmd {

Value cross_entropy(const Value& logits,
                    const std::vector<std::int64_t>& labels, double smoothing) {
  const Tensor& z = logits.val();
  if (z.rank() != 2)
    throw ShapeError("cross_entropy: logits must be (B, C), got " +
                     shape_str(z.shape));
  const std::int64_t b = z.dim(0), c = z.dim(1);
  if (b < 1) throw ShapeError("cross_entropy: empty batch");
  if (static_cast<std::int64_t>(labels.size()) != b)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(b));
  if (smoothing < 0.0 || smoothing >= 0.5)
    throw ValueError("cross_entropy: smoothing must be in [0, 0.5)");
  for (std::int64_t i = 0; i < b; ++i)
    if (labels[static_cast<std::size_t>(i)] < 0 ||
        labels[static_cast<std::size_t>(i)] >= c)
      throw ValueError("cross_entropy: label " +
                       std::to_string(labels[static_cast<std::size_t>(i)]) +
                       " outside [0, " + std::to_string(c) + ")");

  const double off = smoothing / static_cast<double>(c);
  const double on = 1.0 - smoothing + off;
  double total = 0.0;
  for (std::int64_t i = 0; i < b; ++i) {
    const double* row = z.ptr() + i * c;
    double mx = row[0];
    for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    double dot = 0.0;  // sum_c q_c z_c; q sums to 1
    for (std::int64_t j = 0; j < c; ++j) {
      const double q = j == labels[static_cast<std::size_t>(i)] ? on : off;
      dot += q * row[j];
    }
    total += lse - dot;
  }
  const double inv_b = 1.0 / static_cast<double>(b);

  return make_op(
      Tensor::scalar(total * inv_b), {logits}, "cross_entropy",
      [labels, on, off, b, c, inv_b](Node& self) {
        if (!self.parents[0].requires_grad()) return;
        const Tensor& z = self.parents[0].val();
        double* dz = self.parents[0].raw()->ensure_grad().ptr();
        const double g = self.grad[0] * inv_b;
        for (std::int64_t i = 0; i < b; ++i) {
          const double* row = z.ptr() + i * c;
          double mx = row[0];
          for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
          double sum = 0.0;
          for (std::int64_t j = 0; j < c; ++j) sum += std::exp(row[j] - mx);
          const double inv_sum = 1.0 / sum;
          for (std::int64_t j = 0; j < c; ++j) {
            const double p = std::exp(row[j] - mx) * inv_sum;
            const double q =
                j == labels[static_cast<std::size_t>(i)] ? on : off;
            dz[i * c + j] += g * (p - q);
          }
        }
      });
}

Value total_loss(const Value& z_s, const std::vector<std::int64_t>& y_s,
                 const Value& z_t, const std::vector<std::int64_t>& y_t,
                 const EpochWeights& weights, double smoothing,
                 bool clamp_mmd) {
  Value loss = add(scale(cross_entropy(z_s, y_s, smoothing), weights.w_s),
                   scale(cross_entropy(z_t, y_t, smoothing), weights.w_t));
  if (weights.lambda_mmd != 0.0)
    loss = add(loss,
               scale(alignment_penalty(z_s, z_t, clamp_mmd), weights.lambda_mmd));
  return loss;
}

}  // namespace asmmd
