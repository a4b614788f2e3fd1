#include "telescopic/train/metrics.hpp"

#include <string>

#include "telescopic/core/errors.hpp"

namespace telescopic {

MaskScores mask_scores(std::span<const Real> pred, std::span<const Real> truth) {
  if (pred.size() != truth.size())
    throw DimensionError("mask_scores: " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()) +
                         " pixels");
  std::size_t inter = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != Real(0), t = truth[i] != Real(0);
    a += p;
    b += t;
    inter += p && t;
  }
  if (a + b == 0) return {100.0, 100.0};
  return {200.0 * double(inter) / double(a + b), 100.0 * double(inter) / double(a + b - inter)};
}

double dice_score(std::span<const Real> pred, std::span<const Real> truth) { return mask_scores(pred, truth).dice; }
double iou_score(std::span<const Real> pred, std::span<const Real> truth) { return mask_scores(pred, truth).iou; }

std::vector<Real> threshold_logits(std::span<const Real> logits) {
  std::vector<Real> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] >= Real(0) ? Real(1) : Real(0);
  return out;
}

}  // namespace telescopic
