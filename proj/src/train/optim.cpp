#include "telescopic/train/optim.hpp"

#include <cmath>

#include "telescopic/core/errors.hpp"

namespace telescopic {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  if (!(config_.lr >= 0) || !(config_.weight_decay >= 0) || !(config_.eps > 0))
    throw ParameterError("AdamW: lr and weight decay must be non-negative and eps positive");
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw UsageError("AdamW: parameter does not track gradients");
    m_.emplace_back(p.numel(), Real(0));
    v_.emplace_back(p.numel(), Real(0));
  }
}

void AdamW::step() {
  ++t_;
  const Real c1 = Real(1) - std::pow(config_.beta1, Real(t_));
  const Real c2 = Real(1) - std::pow(config_.beta2, Real(t_));
  const Real decay = Real(1) - config_.lr * config_.weight_decay;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    auto w = p.mutable_data();
    const bool has = p.has_grad();
    const auto g = p.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const Real gi = has ? g[i] : Real(0);
      m[i] = config_.beta1 * m[i] + (Real(1) - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (Real(1) - config_.beta2) * gi * gi;
      w[i] *= decay;
      w[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

std::size_t AdamW::state_size() const {
  std::size_t n = 0;
  for (const auto& m : m_) n += m.size();
  return n;
}

}  // namespace telescopic
