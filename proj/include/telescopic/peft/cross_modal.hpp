#pragma once

#include <cstddef>
#include <string>

#include "telescopic/model/layers.hpp"
#include "telescopic/model/params.hpp"

namespace telescopic {

// Projects pooled vision and text vectors into a shared width, attends from
// vision to text and back-projects the result as an additive update to the
// conditional embedding.
struct CrossModalBlock {
  Linear vision_proj;  // d_v -> d_shared
  LayerNormWeights vision_norm;
  Linear text_proj;  // d_t -> d_shared
  LayerNormWeights text_norm;
  AttentionWeights attention;
  Linear back_proj;  // d_shared -> cond_dim, zero at init

  std::size_t shared_width() const { return vision_proj.out_features(); }
};

CrossModalBlock make_cross_modal(ParamSet& params, const std::string& name, std::size_t vision_dim,
                                 std::size_t text_dim, std::size_t cond_dim, std::size_t d_shared, std::size_t heads,
                                 RngStream& rng);

// v_pooled [batch x d_v], z [batch x d_t] -> update [batch x cond_dim].
// Each batch row is one single-token query attending to one text token.
Tensor cross_modal_update(const CrossModalBlock& block, const Tensor& v_pooled, const Tensor& z,
                          Tensor* weights_out = nullptr);

// cond + cross_modal_update(...)
Tensor cross_modal_enhance(const CrossModalBlock& block, const Tensor& cond, const Tensor& v_pooled, const Tensor& z);

}  // namespace telescopic
