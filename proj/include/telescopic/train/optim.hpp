#pragma once

#include <cstddef>
#include <vector>

#include "telescopic/core/tensor.hpp"

namespace telescopic {

struct AdamWConfig {
  Real lr = 1e-3;
  Real weight_decay = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
};

// AdamW with decoupled weight decay and bias-corrected moments. Only the
// tensors handed to the constructor are ever written.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config);

  // Tensors without an accumulated gradient are treated as having zero gradient.
  void step();
  void zero_grad();

  Real lr() const { return config_.lr; }
  void set_lr(Real lr) { config_.lr = lr; }
  std::size_t steps() const { return t_; }
  // Scalars carrying optimizer state (= scalars updated by step()).
  std::size_t state_size() const;
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<Real>> m_, v_;
  AdamWConfig config_;
  std::size_t t_ = 0;
};

}  // namespace telescopic
