#include "asmmd/optim.hpp"

#include <cmath>
#include <utility>

#include "asmmd/errors.hpp"

namespace asmmd {

Adamax::Adamax(std::vector<Value> params, AdamaxConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0)) {
    throw ConfigError("adamax: beta1 must lie in [0, 1)");
  }
  if (!(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0)) {
    throw ConfigError("adamax: beta2 must lie in [0, 1)");
  }
  if (cfg_.eps <= 0.0) throw ConfigError("adamax: eps must be positive");
  if (cfg_.weight_decay < 0.0) {
    throw ConfigError("adamax: weight_decay must be non-negative");
  }
  m_.reserve(params_.size());
  u_.reserve(params_.size());
  for (const Value& p : params_) {
    if (!p.requires_grad()) {
      throw ValueError("adamax: parameter " + p.op() +
                       " does not require gradients");
    }
    m_.push_back(Tensor::zeros(p.val().shape));
    u_.push_back(Tensor::zeros(p.val().shape));
  }
}

void Adamax::step(double lr) {
  ++t_;
  const double bias = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double rate = lr / bias;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Value& p = params_[i];
    const Tensor& g = p.grad();
    Tensor& w = p.mutable_val();
    double* mp = m_[i].data.data();
    double* up = u_[i].data.data();
    const double* gp = g.data.data();
    double* wp = w.data.data();
    const std::int64_t n = w.numel();
    for (std::int64_t j = 0; j < n; ++j) {
      const double gj = gp[j] + cfg_.weight_decay * wp[j];
      if (!std::isfinite(gj)) {
        throw NumericError("adamax: non-finite gradient for parameter " +
                           p.op());
      }
      mp[j] = cfg_.beta1 * mp[j] + (1.0 - cfg_.beta1) * gj;
      up[j] = std::max(cfg_.beta2 * up[j], std::fabs(gj));
      wp[j] -= rate * mp[j] / (up[j] + cfg_.eps);
    }
  }
}

void Adamax::zero_grad() {
  for (Value& p : params_) p.zero_grad();
}

}  // namespace asmmd
