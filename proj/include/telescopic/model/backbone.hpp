#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "telescopic/core/ops.hpp"
#include "telescopic/core/rng.hpp"
#include "telescopic/model/layers.hpp"
#include "telescopic/model/model_spec.hpp"
#include "telescopic/model/params.hpp"

namespace telescopic {

enum class Branch { kVision, kText, kConditional };

// Where a PEFT module hooks into the backbone.
//   kPostAttention / kPostMlp: sublayer output, before the residual add
//   kOnFeatures: an extracted vision layer on its way to the decoder
//   kOnPooled: pooled text embedding, before projection
//   kOnProjection: projected conditional embedding
enum class Position { kPostAttention, kPostMlp, kOnFeatures, kOnPooled, kOnProjection };

std::string to_string(Branch b);
std::string to_string(Position p);
Branch parse_branch(const std::string& s);
Position parse_position(const std::string& s);

struct RunMode {
  bool training = false;
  // Per-step stream; hooks derive per-site streams with split().
  RngStream rng;
};

// Extension points consulted during the forward pass. The defaults leave the
// backbone untouched.
class ModelHooks {
 public:
  virtual ~ModelHooks() = default;
  // `layer` is 1-based for encoder sites and 0 for pooled/projection sites.
  virtual Tensor site(Branch branch, std::size_t layer, Position position, const Tensor& x, const RunMode& mode);
  virtual Tensor projection_delta(Branch branch, std::size_t layer, Projection which, const Tensor& x);
  // Additive update to the conditional embedding from pooled vision and text.
  virtual Tensor cross_modal(const Tensor& cond, const Tensor& vision_pooled, const Tensor& text_pooled,
                             const RunMode& mode);
  virtual Tensor logits(const Tensor& logits, const RunMode& mode);
};

struct EncoderLayerActivations {
  std::size_t batch = 0;
  std::size_t tokens = 0;
  // Index i holds layer i+1.
  std::vector<Tensor> outputs;
  std::vector<Tensor> post_attention;
  std::vector<Tensor> post_mlp;
};

struct ConditionalEmbedding {
  Tensor z;  // pooled text embedding [batch x text_dim]
  Tensor c;  // projected conditional vector [batch x cond_dim]
};

// Token ids, row-major [batch x context_length].
struct TokenBatch {
  std::vector<std::size_t> ids;
  std::size_t batch = 0;
  std::size_t length = 0;
};

struct TransformerBlock {
  LayerNormWeights ln1;
  AttentionWeights attn;
  LayerNormWeights ln2;
  Linear fc1;
  Linear fc2;
};

// Miniature CLIPSeg-style segmenter: ViT vision encoder, text transformer with
// end-of-sequence pooling and projection, FiLM-conditioned decoder over the
// extracted vision layers, and a residual two-layer CNN refinement head.
class Backbone {
 public:
  Backbone(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  // Refinement-head parameter names (trainable during fine-tuning).
  std::vector<std::string> refine_param_names() const;

  // images: [batch x 1 x H x W]
  EncoderLayerActivations vision_encode(const Tensor& images, ModelHooks* hooks, const RunMode& mode) const;
  ConditionalEmbedding text_encode(const TokenBatch& tokens, ModelHooks* hooks, const RunMode& mode) const;
  Tensor decode(const EncoderLayerActivations& acts, const ConditionalEmbedding& cond, ModelHooks* hooks,
                const RunMode& mode) const;
  // Residual Conv3x3(1->4) -> SiLU -> Conv1x1(4->1); logits are [batch x 1 x H x W].
  Tensor refine(const Tensor& logits) const;

  // Full pipeline to refined logits [batch x 1 x H x W].
  Tensor forward(const Tensor& images, const TokenBatch& tokens, ModelHooks* hooks, const RunMode& mode) const;

  // Backbone tensors untracked; refinement head stays trainable.
  void freeze_backbone();
  void unfreeze_all();

  void save(const std::filesystem::path& dir, const nlohmann::json& extra = nlohmann::json::object()) const;
  // Restores values from a checkpoint directory; ConfigError if the recorded
  // ModelSpec differs from `spec()`.
  void load(const std::filesystem::path& dir);
  static ModelSpec read_spec(const std::filesystem::path& dir);

  static constexpr std::size_t kRefineChannels = 4;

 private:
  Tensor run_block(const TransformerBlock& block, const Tensor& x, std::size_t batch, Branch branch,
                   std::size_t layer, ModelHooks* hooks, const RunMode& mode, Tensor* post_attn,
                   Tensor* post_mlp) const;

  ModelSpec spec_;
  ParamSet params_;

  Linear patch_embed_;
  Tensor vision_pos_;
  std::vector<TransformerBlock> vision_blocks_;

  Tensor token_embed_;
  Tensor text_pos_;
  std::vector<TransformerBlock> text_blocks_;
  LayerNormWeights text_final_ln_;
  Linear text_proj_;

  std::vector<Linear> reduce_;
  Linear film_mul_;
  Linear film_add_;
  TransformerBlock decoder_block_;
  Linear head_;

  Tensor refine_conv3_w_, refine_conv3_b_, refine_conv1_w_, refine_conv1_b_;
};

}  // namespace telescopic
