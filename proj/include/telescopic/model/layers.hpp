#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "telescopic/core/ops.hpp"
#include "telescopic/model/params.hpp"

namespace telescopic {

struct Linear {
  Tensor w;  // [in x out]
  Tensor b;  // [out], may be undefined
  Tensor operator()(const Tensor& x) const { return ops::linear(x, w, b.defined() ? &b : nullptr); }
  std::size_t in_features() const { return w.dim(0); }
  std::size_t out_features() const { return w.dim(1); }
};

Linear make_linear(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, RngStream& rng,
                   bool bias = true, Real gain = Real(1));

struct LayerNormWeights {
  Tensor gain;
  Tensor bias;
  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gain, bias); }
};

LayerNormWeights make_layer_norm(ParamSet& params, const std::string& name, std::size_t dim);

enum class Projection { kQuery, kKey, kValue, kOut };

// Optional additive update to a projection output; returns an undefined
// Tensor when nothing is added.
using ProjectionDelta = std::function<Tensor(Projection, const Tensor& input)>;

struct AttentionWeights {
  Linear q, k, v, o;
  std::size_t heads = 1;
};

AttentionWeights make_attention(ParamSet& params, const std::string& name, std::size_t dim, std::size_t heads,
                                RngStream& rng, Real out_gain = Real(1));

// Multi-head scaled dot-product attention over `batch` independent sequences.
// query_in is [batch*tq x d], kv_in is [batch*tk x d]. When `weights_out` is
// given it receives the softmax weights as [batch*heads x tq x tk].
Tensor multi_head_attention(const Tensor& query_in, const Tensor& kv_in, const AttentionWeights& attn,
                            std::size_t batch, const ProjectionDelta& delta = {}, Tensor* weights_out = nullptr);

}  // namespace telescopic
