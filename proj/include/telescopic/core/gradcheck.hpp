#pragma once

#include <functional>
#include <vector>

#include "telescopic/core/tensor.hpp"

namespace telescopic {

// Max over coordinates of |analytic - central| / (|analytic| + |central| + 1e-12),
// where analytic comes from backward() and central from (f(x+h) - f(x-h)) / 2h.
// `f` must return a one-element tensor and be deterministic in its input.
Real finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, Real h = Real(1e-5));

// Same measure over every coordinate of several tracked leaves. `loss` is
// re-evaluated after perturbing each leaf in place; leaf values are restored
// and existing gradients cleared before returning.
Real finite_difference_check(const std::function<Tensor()>& loss, std::vector<Tensor> leaves, Real h = Real(1e-5));

}  // namespace telescopic
