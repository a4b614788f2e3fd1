#pragma once

#include "telescopic/core/tensor.hpp"

namespace telescopic {

struct LossParts {
  Real dice = 0;  // batch mean of per-sample soft Dice loss
  Real bce = 0;   // mean binary cross-entropy over every pixel
};

// lambda_dice * L_Dice + lambda_bce * L_BCE on raw logits.
// Axis 0 indexes samples; Dice is computed per sample and averaged, with
// smoothing `dice_eps` (0 allowed). BCE uses the overflow-free logit form.
// InputError if the mask holds anything but 0/1, DimensionError on a shape
// mismatch, ParameterError for negative weights or eps.
Tensor composite_loss(const Tensor& logits, const Tensor& mask, Real lambda_dice, Real lambda_bce, Real dice_eps,
                      LossParts* parts = nullptr);

}  // namespace telescopic
