#include "telescopic/model/backbone.hpp"

#include <cmath>

#include "telescopic/core/errors.hpp"
#include "telescopic/core/serialize.hpp"

namespace telescopic {

namespace {

TransformerBlock make_block(ParamSet& params, const std::string& name, std::size_t dim, std::size_t heads,
                            std::size_t mlp_ratio, std::size_t depth, RngStream& rng) {
  const Real residual_gain = Real(1) / std::sqrt(Real(2 * depth));
  TransformerBlock b;
  b.ln1 = make_layer_norm(params, name + ".ln1", dim);
  b.attn = make_attention(params, name + ".attn", dim, heads, rng, residual_gain);
  b.ln2 = make_layer_norm(params, name + ".ln2", dim);
  b.fc1 = make_linear(params, name + ".fc1", dim, dim * mlp_ratio, rng);
  b.fc2 = make_linear(params, name + ".fc2", dim * mlp_ratio, dim, rng, true, residual_gain);
  return b;
}

// Repeats a [t x d] table for each of `batch` sequences -> [batch*t x d].
Tensor tile(const Tensor& table, std::size_t batch) {
  if (batch == 1) return table;
  std::vector<Tensor> copies(batch, table);
  return ops::concat(copies, 0);
}

}  // namespace

std::string to_string(Branch b) {
  switch (b) {
    case Branch::kVision: return "vision";
    case Branch::kText: return "text";
    case Branch::kConditional: return "conditional";
  }
  return "?";
}

std::string to_string(Position p) {
  switch (p) {
    case Position::kPostAttention: return "post_attention";
    case Position::kPostMlp: return "post_mlp";
    case Position::kOnFeatures: return "on_features";
    case Position::kOnPooled: return "on_pooled";
    case Position::kOnProjection: return "on_projection";
  }
  return "?";
}

Branch parse_branch(const std::string& s) {
  if (s == "vision") return Branch::kVision;
  if (s == "text") return Branch::kText;
  if (s == "conditional") return Branch::kConditional;
  throw UsageError("unknown branch '" + s + "'");
}

Position parse_position(const std::string& s) {
  if (s == "post_attention") return Position::kPostAttention;
  if (s == "post_mlp") return Position::kPostMlp;
  if (s == "on_features") return Position::kOnFeatures;
  if (s == "on_pooled") return Position::kOnPooled;
  if (s == "on_projection") return Position::kOnProjection;
  throw UsageError("unknown position '" + s + "'");
}

Tensor ModelHooks::site(Branch, std::size_t, Position, const Tensor& x, const RunMode&) { return x; }
Tensor ModelHooks::projection_delta(Branch, std::size_t, Projection, const Tensor&) { return {}; }
Tensor ModelHooks::cross_modal(const Tensor& cond, const Tensor&, const Tensor&, const RunMode&) { return cond; }
Tensor ModelHooks::logits(const Tensor& l, const RunMode&) { return l; }

Backbone::Backbone(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  RngStream rng(seed);
  const auto& s = spec_;
  const std::size_t pix = s.patch_size * s.patch_size;

  patch_embed_ = make_linear(params_, "vision.patch_embed", pix, s.vision_dim, rng);
  vision_pos_ = params_.add("vision.pos", normal_init({s.tokens(), s.vision_dim}, Real(0.1), rng));
  for (std::size_t i = 1; i <= s.vision_layers; ++i)
    vision_blocks_.push_back(make_block(params_, "vision.layer" + std::to_string(i), s.vision_dim, s.vision_heads,
                                        s.mlp_ratio, s.vision_layers, rng));

  token_embed_ = params_.add("text.token_embed", normal_init({s.vocab_size, s.text_dim}, Real(0.5), rng));
  text_pos_ = params_.add("text.pos", normal_init({s.context_length, s.text_dim}, Real(0.1), rng));
  for (std::size_t i = 1; i <= s.text_layers; ++i)
    text_blocks_.push_back(make_block(params_, "text.layer" + std::to_string(i), s.text_dim, s.text_heads,
                                      s.mlp_ratio, s.text_layers, rng));
  text_final_ln_ = make_layer_norm(params_, "text.ln_final", s.text_dim);
  text_proj_ = make_linear(params_, "text.proj", s.text_dim, s.cond_dim, rng, /*bias=*/false);

  for (std::size_t layer : s.extract_layers)
    reduce_.push_back(make_linear(params_, "decoder.reduce" + std::to_string(layer), s.vision_dim, s.cond_dim, rng));
  film_mul_ = make_linear(params_, "decoder.film_mul", s.cond_dim, s.cond_dim, rng, true, Real(0.5));
  film_add_ = make_linear(params_, "decoder.film_add", s.cond_dim, s.cond_dim, rng, true, Real(0.5));
  decoder_block_ = make_block(params_, "decoder.block", s.cond_dim, s.decoder_heads, s.mlp_ratio, 1, rng);
  head_ = make_linear(params_, "decoder.head", s.cond_dim, pix, rng);

  refine_conv3_w_ = params_.add("refine.conv3.w", normal_init({kRefineChannels, 1, 3, 3}, Real(1) / Real(3), rng));
  refine_conv3_b_ = params_.add("refine.conv3.b", Tensor::zeros({kRefineChannels}));
  // Zero output layer: the head starts as the identity but still receives gradients.
  refine_conv1_w_ = params_.add("refine.conv1.w", Tensor::zeros({1, kRefineChannels, 1, 1}));
  refine_conv1_b_ = params_.add("refine.conv1.b", Tensor::zeros({1}));
}

std::vector<std::string> Backbone::refine_param_names() const {
  return {"refine.conv3.w", "refine.conv3.b", "refine.conv1.w", "refine.conv1.b"};
}

Tensor Backbone::run_block(const TransformerBlock& block, const Tensor& x, std::size_t batch, Branch branch,
                           std::size_t layer, ModelHooks* hooks, const RunMode& mode, Tensor* post_attn,
                           Tensor* post_mlp) const {
  ProjectionDelta delta;
  if (hooks)
    delta = [&](Projection which, const Tensor& in) { return hooks->projection_delta(branch, layer, which, in); };
  Tensor h = block.ln1(x);
  Tensor a = multi_head_attention(h, h, block.attn, batch, delta);
  if (hooks) a = hooks->site(branch, layer, Position::kPostAttention, a, mode);
  if (post_attn) *post_attn = a;
  Tensor y = ops::add(x, a);
  Tensor m = block.fc2(ops::silu(block.fc1(block.ln2(y))));
  if (hooks) m = hooks->site(branch, layer, Position::kPostMlp, m, mode);
  if (post_mlp) *post_mlp = m;
  return ops::add(y, m);
}

EncoderLayerActivations Backbone::vision_encode(const Tensor& images, ModelHooks* hooks, const RunMode& mode) const {
  const auto& s = spec_;
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != s.image_size || images.dim(3) != s.image_size)
    throw DimensionError("vision_encode: expected [batch x 1 x " + std::to_string(s.image_size) + " x " +
                         std::to_string(s.image_size) + "], got " + shape_str(images.shape()));
  const std::size_t batch = images.dim(0);
  EncoderLayerActivations acts;
  acts.batch = batch;
  acts.tokens = s.tokens();
  Tensor x = ops::add(patch_embed_(ops::patchify(images, s.patch_size)), tile(vision_pos_, batch));
  for (std::size_t i = 0; i < vision_blocks_.size(); ++i) {
    Tensor pa, pm;
    x = run_block(vision_blocks_[i], x, batch, Branch::kVision, i + 1, hooks, mode, &pa, &pm);
    acts.outputs.push_back(x);
    acts.post_attention.push_back(pa);
    acts.post_mlp.push_back(pm);
  }
  return acts;
}

ConditionalEmbedding Backbone::text_encode(const TokenBatch& tokens, ModelHooks* hooks, const RunMode& mode) const {
  const auto& s = spec_;
  if (tokens.length != s.context_length || tokens.ids.size() != tokens.batch * tokens.length || tokens.batch == 0)
    throw DimensionError("text_encode: expected token rows of length " + std::to_string(s.context_length));
  for (std::size_t id : tokens.ids)
    if (id >= s.vocab_size)
      throw InputError("text_encode: token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(s.vocab_size));
  Tensor x = ops::add(ops::embedding(token_embed_, tokens.ids), tile(text_pos_, tokens.batch));
  for (std::size_t i = 0; i < text_blocks_.size(); ++i)
    x = run_block(text_blocks_[i], x, tokens.batch, Branch::kText, i + 1, hooks, mode, nullptr, nullptr);
  x = text_final_ln_(x);

  std::vector<std::size_t> pool_rows;
  for (std::size_t b = 0; b < tokens.batch; ++b) {
    std::size_t at = tokens.length - 1;
    for (std::size_t t = 0; t < tokens.length; ++t)
      if (tokens.ids[b * tokens.length + t] == kEosToken) {
        at = t;
        break;
      }
    pool_rows.push_back(b * tokens.length + at);
  }
  ConditionalEmbedding out;
  out.z = ops::gather_rows(x, pool_rows);
  if (hooks) out.z = hooks->site(Branch::kText, 0, Position::kOnPooled, out.z, mode);
  out.c = text_proj_(out.z);
  if (hooks) out.c = hooks->site(Branch::kConditional, 0, Position::kOnProjection, out.c, mode);
  return out;
}

Tensor Backbone::decode(const EncoderLayerActivations& acts, const ConditionalEmbedding& cond, ModelHooks* hooks,
                        const RunMode& mode) const {
  const auto& s = spec_;
  const std::size_t batch = acts.batch;
  if (cond.c.rank() != 2 || cond.c.dim(0) != batch || cond.c.dim(1) != s.cond_dim)
    throw DimensionError("decode: conditional embedding " + shape_str(cond.c.shape()) + " does not match batch " +
                         std::to_string(batch));
  Tensor gamma = ops::expand_rows(film_mul_(cond.c), acts.tokens);
  Tensor beta = ops::expand_rows(film_add_(cond.c), acts.tokens);
  Tensor fused;
  for (std::size_t i = 0; i < s.extract_layers.size(); ++i) {
    const std::size_t layer = s.extract_layers[i];
    if (layer > acts.outputs.size() || !acts.outputs[layer - 1].defined())
      throw Error("decode: activations missing extract layer " + std::to_string(layer));
    Tensor feats = acts.outputs[layer - 1];
    if (hooks) feats = hooks->site(Branch::kVision, layer, Position::kOnFeatures, feats, mode);
    Tensor r = reduce_[i](feats);
    r = ops::add(ops::add(r, ops::mul(r, gamma)), beta);
    fused = fused.defined() ? ops::add(fused, r) : r;
  }
  Tensor x = run_block(decoder_block_, fused, batch, Branch::kVision, 0, nullptr, mode, nullptr, nullptr);
  return ops::unpatchify(head_(x), batch, 1, s.image_size, s.image_size, s.patch_size);
}

Tensor Backbone::refine(const Tensor& logits) const {
  if (logits.rank() != 4 || logits.dim(1) != 1)
    throw DimensionError("refine: expected single-channel [batch x 1 x H x W], got " + shape_str(logits.shape()));
  Tensor h = ops::silu(ops::conv2d(logits, refine_conv3_w_, &refine_conv3_b_, ops::Padding::kSame));
  return ops::add(logits, ops::conv2d(h, refine_conv1_w_, &refine_conv1_b_, ops::Padding::kSame));
}

Tensor Backbone::forward(const Tensor& images, const TokenBatch& tokens, ModelHooks* hooks,
                         const RunMode& mode) const {
  if (images.rank() != 4 || images.dim(0) != tokens.batch)
    throw DimensionError("forward: image batch " + shape_str(images.shape()) + " does not match " +
                         std::to_string(tokens.batch) + " prompts");
  EncoderLayerActivations acts = vision_encode(images, hooks, mode);
  ConditionalEmbedding cond = text_encode(tokens, hooks, mode);
  if (hooks) {
    Tensor v_pooled = ops::mean_groups(acts.outputs.back(), acts.tokens);
    cond.c = hooks->cross_modal(cond.c, v_pooled, cond.z, mode);
  }
  Tensor logits = decode(acts, cond, hooks, mode);
  if (hooks) logits = hooks->logits(logits, mode);
  return refine(logits);
}

void Backbone::freeze_backbone() {
  params_.set_trainable(false);
  for (const auto& e : params_.entries())
    if (e.name.rfind("refine.", 0) == 0) {
      Tensor t = e.tensor;
      t.set_requires_grad(true);
    }
}

void Backbone::unfreeze_all() { params_.set_trainable(true); }

void Backbone::save(const std::filesystem::path& dir, const nlohmann::json& extra) const {
  nlohmann::json manifest = extra;
  manifest["model_spec"] = to_json(spec_);
  io::save_tensor_dir(dir, params_.snapshot(), manifest);
}

ModelSpec Backbone::read_spec(const std::filesystem::path& dir) {
  auto manifest = io::read_json_file(dir / "manifest.json");
  if (!manifest.contains("model_spec")) throw CorruptionError("checkpoint " + dir.string() + " records no model_spec");
  return model_spec_from_json(manifest.at("model_spec"));
}

void Backbone::load(const std::filesystem::path& dir) {
  io::TensorDir loaded = io::load_tensor_dir(dir);
  if (!loaded.manifest.contains("model_spec"))
    throw CorruptionError("checkpoint " + dir.string() + " records no model_spec");
  if (model_spec_from_json(loaded.manifest.at("model_spec")) != spec_)
    throw ConfigError("checkpoint " + dir.string() + " was trained with a different model spec");
  params_.load_values(loaded.entries, dir.string());
}

}  // namespace telescopic
