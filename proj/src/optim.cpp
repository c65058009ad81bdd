#include "prockd/optim.hpp"

#include <cmath>

namespace prockd {

AdamW::AdamW(ParamList params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step() {
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  const double b1 = config_.beta1, b2 = config_.beta2, lr = config_.lr, decay = lr * config_.weight_decay,
               eps = config_.eps;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor param = params_[k].tensor;
    if (!param.requires_grad()) continue;
    const auto& grad = param.impl().grad;
    const std::size_t size = param.numel();
    double* w = param.mutable_data().data();
    double* m = m_[k].data();
    double* v = v_[k].data();
    const double* g = grad.empty() ? nullptr : grad.data();
    for (std::size_t i = 0; i < size; ++i) {
      const double gi = g ? g[i] : 0.0;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      w[i] -= decay * w[i];
      w[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
  }
}

void AdamW::zero_grad() {
  for (const auto& p : params_) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

double AdamW::grad_norm() const {
  double total = 0.0;
  for (const auto& p : params_) {
    if (!p.tensor.requires_grad()) continue;
    for (double g : p.tensor.impl().grad) total += g * g;
  }
  return std::sqrt(total);
}

}  // namespace prockd
