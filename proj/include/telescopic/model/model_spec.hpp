#pragma once

#include <cstddef>
#include <vector>

#include "json.hpp"

namespace telescopic {

inline constexpr std::size_t kPadToken = 0;
inline constexpr std::size_t kBosToken = 1;
inline constexpr std::size_t kEosToken = 2;

// Geometry of the vision-language segmentation backbone.
struct ModelSpec {
  std::size_t image_size = 32;
  std::size_t patch_size = 4;
  std::size_t vision_layers = 9;
  std::size_t vision_dim = 64;
  std::size_t vision_heads = 4;
  std::size_t text_layers = 9;
  std::size_t text_dim = 48;
  std::size_t text_heads = 4;
  std::size_t vocab_size = 64;
  std::size_t context_length = 16;
  std::size_t cond_dim = 64;
  std::size_t decoder_heads = 4;
  std::size_t mlp_ratio = 4;
  // 1-based, strictly ascending; also the number of leading vision layers
  // that receive adapters is extract_layers.back().
  std::vector<std::size_t> extract_layers{3, 6, 9};

  // Throws ConfigError on any violated invariant.
  void validate() const;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t adapted_vision_layers() const { return extract_layers.back(); }
  // Text adapters go into the final three layers.
  std::size_t first_adapted_text_layer() const { return text_layers >= 3 ? text_layers - 2 : 1; }

  // CLIP ViT-B/16-like widths used only for parameter accounting.
  static ModelSpec paper_geometry();

  bool operator==(const ModelSpec&) const = default;
};

nlohmann::json to_json(const ModelSpec& spec);
// Rejects unknown keys; absent keys keep their defaults.
ModelSpec model_spec_from_json(const nlohmann::json& j);

}  // namespace telescopic
