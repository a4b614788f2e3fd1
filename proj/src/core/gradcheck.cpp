#include "telescopic/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "telescopic/core/errors.hpp"

namespace telescopic {

namespace {

Real relative_error(Real analytic, Real central) {
  return std::abs(analytic - central) / (std::abs(analytic) + std::abs(central) + Real(1e-12));
}

}  // namespace

Real finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, Real h) {
  if (!(h > 0)) throw ParameterError("finite_difference_check: h must be positive");
  Tensor tracked = x.detach();
  tracked.set_requires_grad(true);
  backward(f(tracked));
  std::vector<Real> analytic(tracked.numel(), Real(0));
  if (tracked.has_grad()) std::copy(tracked.grad().begin(), tracked.grad().end(), analytic.begin());

  Real worst = 0;
  Tensor probe = x.detach();
  auto values = probe.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real saved = values[i];
    values[i] = saved + h;
    const Real up = f(probe).item();
    values[i] = saved - h;
    const Real down = f(probe).item();
    values[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (Real(2) * h)));
  }
  return worst;
}

Real finite_difference_check(const std::function<Tensor()>& loss, std::vector<Tensor> leaves, Real h) {
  if (!(h > 0)) throw ParameterError("finite_difference_check: h must be positive");
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) throw UsageError("finite_difference_check: leaf does not track gradients");
    leaf.zero_grad();
  }
  backward(loss());
  std::vector<std::vector<Real>> analytic;
  for (auto& leaf : leaves) {
    std::vector<Real> g(leaf.numel(), Real(0));
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }
  Real worst = 0;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    auto values = leaves[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real saved = values[i];
      values[i] = saved + h;
      const Real up = loss().item();
      values[i] = saved - h;
      const Real down = loss().item();
      values[i] = saved;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (Real(2) * h)));
    }
    leaves[k].zero_grad();
  }
  return worst;
}

}  // namespace telescopic
