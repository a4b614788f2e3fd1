#include "telescopic/peft/cross_modal.hpp"

#include "telescopic/core/errors.hpp"

namespace telescopic {

CrossModalBlock make_cross_modal(ParamSet& params, const std::string& name, std::size_t vision_dim,
                                 std::size_t text_dim, std::size_t cond_dim, std::size_t d_shared, std::size_t heads,
                                 RngStream& rng) {
  CrossModalBlock b;
  b.vision_proj = make_linear(params, name + ".vision_proj", vision_dim, d_shared, rng);
  b.vision_norm = make_layer_norm(params, name + ".vision_norm", d_shared);
  b.text_proj = make_linear(params, name + ".text_proj", text_dim, d_shared, rng);
  b.text_norm = make_layer_norm(params, name + ".text_norm", d_shared);
  b.attention = make_attention(params, name + ".attn", d_shared, heads, rng);
  b.back_proj.w = params.add(name + ".back_proj.w", Tensor::zeros({d_shared, cond_dim}));
  b.back_proj.b = params.add(name + ".back_proj.b", Tensor::zeros({cond_dim}));
  return b;
}

Tensor cross_modal_update(const CrossModalBlock& block, const Tensor& v_pooled, const Tensor& z, Tensor* weights_out) {
  if (v_pooled.rank() != 2 || z.rank() != 2 || v_pooled.dim(0) != z.dim(0))
    throw DimensionError("cross_modal_update: pooled inputs " + shape_str(v_pooled.shape()) + " and " +
                         shape_str(z.shape()) + " must be [batch x d]");
  const std::size_t batch = v_pooled.dim(0);
  Tensor v = block.vision_norm(block.vision_proj(v_pooled));
  Tensor t = block.text_norm(block.text_proj(z));
  Tensor attended = multi_head_attention(v, t, block.attention, batch, {}, weights_out);
  return block.back_proj(attended);
}

Tensor cross_modal_enhance(const CrossModalBlock& block, const Tensor& cond, const Tensor& v_pooled, const Tensor& z) {
  return ops::add(cond, cross_modal_update(block, v_pooled, z));
}

}  // namespace telescopic
