#include "telescopic/train/loss.hpp"

#include <cmath>
#include <string>

#include "telescopic/core/errors.hpp"

namespace telescopic {

namespace {
Real logistic(Real x) { return x >= 0 ? Real(1) / (Real(1) + std::exp(-x)) : std::exp(x) / (Real(1) + std::exp(x)); }
}  // namespace

Tensor composite_loss(const Tensor& logits, const Tensor& mask, Real lambda_dice, Real lambda_bce, Real dice_eps,
                      LossParts* parts) {
  if (logits.shape() != mask.shape())
    throw DimensionError("composite_loss: logits " + shape_str(logits.shape()) + " vs mask " + shape_str(mask.shape()));
  if (!(lambda_dice >= 0 && lambda_bce >= 0)) throw ParameterError("composite_loss: loss weights must be non-negative");
  if (!(dice_eps >= 0)) throw ParameterError("composite_loss: dice eps must be non-negative");
  const auto x = logits.data();
  const auto g = mask.data();
  for (Real v : g)
    if (v != Real(0) && v != Real(1)) throw InputError("composite_loss: mask values must be 0 or 1");

  const std::size_t n = x.size();
  const std::size_t batch = logits.rank() >= 2 ? logits.dim(0) : 1;
  const std::size_t per = n / batch;
  std::vector<Real> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = logistic(x[i]);

  Real bce = 0;
  for (std::size_t i = 0; i < n; ++i) bce += std::max(x[i], Real(0)) - x[i] * g[i] + std::log1p(std::exp(-std::abs(x[i])));
  bce /= Real(n);

  // Per-sample numerator/denominator for the Dice gradient.
  std::vector<Real> num(batch), den(batch);
  Real dice = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    Real pg = 0, sp = 0, sg = 0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      pg += p[i] * g[i];
      sp += p[i];
      sg += g[i];
    }
    num[b] = 2 * pg + dice_eps;
    den[b] = sp + sg + dice_eps;
    dice += den[b] > 0 ? Real(1) - num[b] / den[b] : Real(0);  // both empty with eps = 0 counts as perfect
  }
  dice /= Real(batch);
  if (parts) *parts = {dice, bce};

  const Real total = lambda_dice * dice + lambda_bce * bce;
  return make_op_result({1}, {total}, {logits},
                        [=, p = std::move(p), num = std::move(num), den = std::move(den),
                         g = std::vector<Real>(g.begin(), g.end())](detail::Node& self) {
                          auto& grad = self.parents[0]->ensure_grad();
                          const Real up = self.grad[0];
                          if (lambda_bce != 0) {
                            const Real s = up * lambda_bce / Real(n);
                            for (std::size_t i = 0; i < n; ++i) grad[i] += s * (p[i] - g[i]);
                          }
                          if (lambda_dice != 0) {
                            const Real s = up * lambda_dice / Real(batch);
                            for (std::size_t b = 0; b < batch; ++b) {
                              if (!(den[b] > 0)) continue;
                              const Real inv = Real(1) / (den[b] * den[b]);
                              for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
                                const Real dp = -(2 * g[i] * den[b] - num[b]) * inv;
                                grad[i] += s * dp * p[i] * (Real(1) - p[i]);
                              }
                            }
                          }
                        });
}

}  // namespace telescopic
