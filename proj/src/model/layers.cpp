#include "telescopic/model/layers.hpp"

#include <cmath>

#include "telescopic/core/errors.hpp"

namespace telescopic {

Linear make_linear(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, RngStream& rng,
                   bool bias, Real gain) {
  Linear l;
  l.w = params.add(name + ".w", normal_init({in, out}, gain / std::sqrt(Real(in)), rng));
  if (bias) l.b = params.add(name + ".b", Tensor::zeros({out}));
  return l;
}

LayerNormWeights make_layer_norm(ParamSet& params, const std::string& name, std::size_t dim) {
  return {params.add(name + ".gain", Tensor::ones({dim})), params.add(name + ".bias", Tensor::zeros({dim}))};
}

AttentionWeights make_attention(ParamSet& params, const std::string& name, std::size_t dim, std::size_t heads,
                                RngStream& rng, Real out_gain) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  AttentionWeights a;
  a.q = make_linear(params, name + ".q", dim, dim, rng);
  a.k = make_linear(params, name + ".k", dim, dim, rng);
  a.v = make_linear(params, name + ".v", dim, dim, rng);
  a.o = make_linear(params, name + ".o", dim, dim, rng, true, out_gain);
  a.heads = heads;
  return a;
}

namespace {

Tensor project(const Linear& l, Projection which, const Tensor& x, const ProjectionDelta& delta) {
  Tensor y = l(x);
  if (delta) {
    Tensor d = delta(which, x);
    if (d.defined()) y = ops::add(y, d);
  }
  return y;
}

// [batch*t x heads*dh] -> [batch*heads x t x dh]
Tensor split_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  const std::size_t t = x.dim(0) / batch, dh = x.dim(1) / heads;
  return ops::reshape(ops::swap_axes12(ops::reshape(x, {batch, t, heads, dh})), {batch * heads, t, dh});
}

Tensor merge_heads(const Tensor& x, std::size_t batch, std::size_t heads) {
  const std::size_t t = x.dim(1), dh = x.dim(2);
  return ops::reshape(ops::swap_axes12(ops::reshape(x, {batch, heads, t, dh})), {batch * t, heads * dh});
}

}  // namespace

Tensor multi_head_attention(const Tensor& query_in, const Tensor& kv_in, const AttentionWeights& attn,
                            std::size_t batch, const ProjectionDelta& delta, Tensor* weights_out) {
  if (batch == 0 || query_in.dim(0) % batch || kv_in.dim(0) % batch)
    throw DimensionError("multi_head_attention: rows " + shape_str(query_in.shape()) + "/" + shape_str(kv_in.shape()) +
                         " not divisible by batch " + std::to_string(batch));
  const std::size_t d = attn.q.out_features();
  const std::size_t dh = d / attn.heads;
  // Scaling the queries is cheaper than scaling the [t x t] scores.
  Tensor q = ops::scale(project(attn.q, Projection::kQuery, query_in, delta), Real(1) / std::sqrt(Real(dh)));
  q = split_heads(q, batch, attn.heads);
  Tensor k = split_heads(project(attn.k, Projection::kKey, kv_in, delta), batch, attn.heads);
  Tensor v = split_heads(project(attn.v, Projection::kValue, kv_in, delta), batch, attn.heads);
  Tensor weights = ops::softmax(ops::bmm(q, k, /*transpose_b=*/true));
  if (weights_out) *weights_out = weights;
  Tensor mixed = merge_heads(ops::bmm(weights, v), batch, attn.heads);
  return project(attn.o, Projection::kOut, mixed, delta);
}

}  // namespace telescopic
