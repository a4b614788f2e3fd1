#pragma once

#include <cstddef>
#include <string>

#include "telescopic/core/ops.hpp"
#include "telescopic/model/params.hpp"

namespace telescopic {

// L * sigmoid(conv1x1(silu(bn(conv3x3(L))))) on single-channel logits.
struct DecoderEnhancement {
  Tensor conv3_w, conv3_b;  // [c x 1 x 3 x 3], [c]
  Tensor bn_gain, bn_bias;  // [c]
  Tensor conv1_w, conv1_b;  // [1 x c x 1 x 1], [1]
  // Running statistics live in the owning ParamSet as untracked entries.
  ops::BatchNormStats* stats = nullptr;

  std::size_t channels() const { return conv3_w.dim(0); }
};

// Registers trainable weights under `name` and the running statistics as
// untracked `name`.bn.running_{mean,var}; `stats` must outlive the block.
DecoderEnhancement make_decoder_enhancement(ParamSet& params, const std::string& name, std::size_t channels,
                                            RngStream& rng, ops::BatchNormStats& stats);

// The attention mask A in (0,1), shaped like `logits` ([batch x 1 x H x W]).
Tensor enhancement_mask(const DecoderEnhancement& enh, const Tensor& logits, bool training);
Tensor decoder_enhance(const DecoderEnhancement& enh, const Tensor& logits, bool training);

}  // namespace telescopic
