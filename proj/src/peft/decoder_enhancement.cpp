#include "telescopic/peft/decoder_enhancement.hpp"

#include <cmath>

#include "telescopic/core/errors.hpp"

namespace telescopic {

DecoderEnhancement make_decoder_enhancement(ParamSet& params, const std::string& name, std::size_t channels,
                                            RngStream& rng, ops::BatchNormStats& stats) {
  DecoderEnhancement e;
  e.conv3_w = params.add(name + ".conv3.w", normal_init({channels, 1, 3, 3}, Real(1) / Real(3), rng));
  e.conv3_b = params.add(name + ".conv3.b", Tensor::zeros({channels}));
  e.bn_gain = params.add(name + ".bn.gain", Tensor::ones({channels}));
  e.bn_bias = params.add(name + ".bn.bias", Tensor::zeros({channels}));
  e.conv1_w = params.add(name + ".conv1.w", normal_init({1, channels, 1, 1}, Real(1) / std::sqrt(Real(channels)), rng));
  e.conv1_b = params.add(name + ".conv1.b", Tensor::zeros({1}));
  stats = ops::BatchNormStats::fresh(channels);
  stats.running_mean = params.add_buffer(name + ".bn.running_mean", stats.running_mean);
  stats.running_var = params.add_buffer(name + ".bn.running_var", stats.running_var);
  e.stats = &stats;
  return e;
}

Tensor enhancement_mask(const DecoderEnhancement& enh, const Tensor& logits, bool training) {
  if (logits.rank() != 4 || logits.dim(1) != 1)
    throw DimensionError("decoder_enhance: expected [batch x 1 x H x W] logits, got " + shape_str(logits.shape()));
  if (!enh.stats) throw UsageError("decoder_enhance: block has no batch-norm statistics");
  Tensor h = ops::conv2d(logits, enh.conv3_w, &enh.conv3_b, ops::Padding::kSame);
  h = ops::silu(ops::batch_norm(h, enh.bn_gain, enh.bn_bias, *enh.stats, training));
  return ops::sigmoid(ops::conv2d(h, enh.conv1_w, &enh.conv1_b, ops::Padding::kSame));
}

Tensor decoder_enhance(const DecoderEnhancement& enh, const Tensor& logits, bool training) {
  return ops::mul(logits, enhancement_mask(enh, logits, training));
}

}  // namespace telescopic
