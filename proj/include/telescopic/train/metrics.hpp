#pragma once

#include <span>
#include <vector>

#include "telescopic/core/tensor.hpp"

namespace telescopic {

struct MaskScores {
  double dice = 0;  // percent
  double iou = 0;   // percent
};

// Binary masks of equal length; both empty scores 100/100.
MaskScores mask_scores(std::span<const Real> pred, std::span<const Real> truth);
double dice_score(std::span<const Real> pred, std::span<const Real> truth);
double iou_score(std::span<const Real> pred, std::span<const Real> truth);

// Probability >= 0.5, i.e. logit >= 0.
std::vector<Real> threshold_logits(std::span<const Real> logits);

}  // namespace telescopic
