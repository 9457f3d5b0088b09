#include "asmmd/splitbn.hpp"

#include <cmath>

#include "asmmd/errors.hpp"

namespace asmmd {

SplitBatchNorm::SplitBatchNorm(std::int64_t n_features, double momentum,
                               double eps, bool pooled)
    : f_(n_features), momentum_(momentum), eps_(eps), pooled_(pooled) {
  if (n_features < 1)
    throw ValueError("SplitBatchNorm: need at least one feature");
  if (momentum <= 0.0 || momentum > 1.0)
    throw ValueError("SplitBatchNorm: momentum must be in (0, 1]");
  if (eps <= 0.0) throw ValueError("SplitBatchNorm: eps must be positive");
  gamma_ = Value::leaf(Tensor::full({f_}, 1.0), true, "bn.gamma");
  beta_ = Value::leaf(Tensor::zeros({f_}), true, "bn.beta");
  for (int d = 0; d < 2; ++d) {
    rm_[d] = Tensor::zeros({f_});
    rv_[d] = Tensor::full({f_}, 1.0);
  }
}

void SplitBatchNorm::check_input(const Tensor& x, std::int64_t* rows) const {
  if (f_ == 0) throw ValueError("SplitBatchNorm: layer is not initialized");
  if (x.rank() < 2 || x.shape.back() != f_)
    throw ShapeError("SplitBatchNorm: input " + shape_str(x.shape) +
                     " does not end in " + std::to_string(f_) + " features");
  *rows = x.numel() / f_;
}

Value SplitBatchNorm::forward_train(const Value& x) {
  std::int64_t rows = 0;
  check_input(x.val(), &rows);
  if (rows < 2)
    throw ValueError(
        "SplitBatchNorm: batch variance needs at least 2 samples per feature, "
        "got " +
        std::to_string(rows));
  const Tensor& xt = x.val();
  const double* xp = xt.ptr();
  const std::int64_t f = f_;

  Tensor mean = Tensor::zeros({f});
  Tensor var = Tensor::zeros({f});
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = xp + r * f;
    for (std::int64_t j = 0; j < f; ++j) mean[j] += row[j];
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (std::int64_t j = 0; j < f; ++j) mean[j] *= inv_rows;
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = xp + r * f;
    for (std::int64_t j = 0; j < f; ++j) {
      const double d = row[j] - mean[j];
      var[j] += d * d;
    }
  }
  for (std::int64_t j = 0; j < f; ++j) var[j] *= inv_rows;

  Tensor inv_std = Tensor::zeros({f});
  for (std::int64_t j = 0; j < f; ++j)
    inv_std[j] = 1.0 / std::sqrt(var[j] + eps_);

  // Running buffers see the unbiased variance; not part of the graph.
  const int slot = active_slot();
  const double unbias =
      static_cast<double>(rows) / static_cast<double>(rows - 1);
  for (std::int64_t j = 0; j < f; ++j) {
    rm_[slot][j] = (1.0 - momentum_) * rm_[slot][j] + momentum_ * mean[j];
    rv_[slot][j] =
        (1.0 - momentum_) * rv_[slot][j] + momentum_ * (var[j] * unbias);
  }

  Tensor out = Tensor::zeros(xt.shape);
  {
    const double* gp = gamma_.val().ptr();
    const double* bp = beta_.val().ptr();
    double* o = out.ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* row = xp + r * f;
      double* orow = o + r * f;
      for (std::int64_t j = 0; j < f; ++j)
        orow[j] = gp[j] * (row[j] - mean[j]) * inv_std[j] + bp[j];
    }
  }

  return make_op(
      std::move(out), {x, gamma_, beta_}, "splitbn_train",
      [mean = std::move(mean), inv_std = std::move(inv_std), rows,
       f](Node& self) {
        const double* g = self.grad.ptr();
        const double* xp = self.parents[0].val().ptr();
        const double* gp = self.parents[1].val().ptr();
        const bool need_x = self.parents[0].requires_grad();
        const bool need_gamma = self.parents[1].requires_grad();
        const bool need_beta = self.parents[2].requires_grad();
        std::vector<double> s1(static_cast<std::size_t>(f), 0.0);
        std::vector<double> s2(static_cast<std::size_t>(f), 0.0);
        double* dgamma =
            need_gamma ? self.parents[1].raw()->ensure_grad().ptr() : nullptr;
        double* dbeta =
            need_beta ? self.parents[2].raw()->ensure_grad().ptr() : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
          const double* grow = g + r * f;
          const double* xrow = xp + r * f;
          for (std::int64_t j = 0; j < f; ++j) {
            const double xhat = (xrow[j] - mean[j]) * inv_std[j];
            const double dxh = grow[j] * gp[j];
            s1[static_cast<std::size_t>(j)] += dxh;
            s2[static_cast<std::size_t>(j)] += dxh * xhat;
            if (dgamma) dgamma[j] += grow[j] * xhat;
            if (dbeta) dbeta[j] += grow[j];
          }
        }
        if (need_x) {
          double* dx = self.parents[0].raw()->ensure_grad().ptr();
          const double inv_rows = 1.0 / static_cast<double>(rows);
          for (std::int64_t r = 0; r < rows; ++r) {
            const double* grow = g + r * f;
            const double* xrow = xp + r * f;
            double* drow = dx + r * f;
            for (std::int64_t j = 0; j < f; ++j) {
              const double xhat = (xrow[j] - mean[j]) * inv_std[j];
              const double dxh = grow[j] * gp[j];
              drow[j] += inv_std[j] *
                         (dxh - inv_rows * s1[static_cast<std::size_t>(j)] -
                          xhat * inv_rows * s2[static_cast<std::size_t>(j)]);
            }
          }
        }
      });
}

Value SplitBatchNorm::forward_eval(const Value& x) const {
  std::int64_t rows = 0;
  check_input(x.val(), &rows);
  const Tensor& xt = x.val();
  const std::int64_t f = f_;
  const int slot = active_slot();

  Tensor mean = rm_[slot];
  Tensor inv_std = Tensor::zeros({f});
  for (std::int64_t j = 0; j < f; ++j)
    inv_std[j] = 1.0 / std::sqrt(rv_[slot][j] + eps_);

  Tensor out = Tensor::zeros(xt.shape);
  const double* xp = xt.ptr();
  const double* gp = gamma_.val().ptr();
  const double* bp = beta_.val().ptr();
  double* o = out.ptr();
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = xp + r * f;
    double* orow = o + r * f;
    for (std::int64_t j = 0; j < f; ++j)
      orow[j] = gp[j] * (row[j] - mean[j]) * inv_std[j] + bp[j];
  }

  return make_op(
      std::move(out), {x, gamma_, beta_}, "splitbn_eval",
      [mean = std::move(mean), inv_std = std::move(inv_std), rows,
       f](Node& self) {
        const double* g = self.grad.ptr();
        const double* xp = self.parents[0].val().ptr();
        const double* gp = self.parents[1].val().ptr();
        if (self.parents[0].requires_grad()) {
          double* dx = self.parents[0].raw()->ensure_grad().ptr();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < f; ++j)
              dx[r * f + j] += g[r * f + j] * gp[j] * inv_std[j];
        }
        if (self.parents[1].requires_grad()) {
          double* dgamma = self.parents[1].raw()->ensure_grad().ptr();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < f; ++j)
              dgamma[j] +=
                  g[r * f + j] * (xp[r * f + j] - mean[j]) * inv_std[j];
        }
        if (self.parents[2].requires_grad()) {
          double* dbeta = self.parents[2].raw()->ensure_grad().ptr();
          for (std::int64_t r = 0; r < rows; ++r)
            for (std::int64_t j = 0; j < f; ++j) dbeta[j] += g[r * f + j];
        }
      });
}

}  // namespace asmmd
