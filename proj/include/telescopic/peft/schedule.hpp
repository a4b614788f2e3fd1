#pragma once

#include <cstddef>
#include <vector>

namespace telescopic {

// d' = max(8, min(d_adapter, floor(d/4))); ConfigError when d < 8.
std::size_t clip_bottleneck(std::size_t d_adapter, std::size_t d);

// Entry i (1-based) = max(8, floor(d_base * i / (2 * layers))).
std::vector<std::size_t> telescopic_vision_dims(std::size_t d_base, std::size_t layers);

std::size_t text_adapter_dim(std::size_t d_base);         // max(8, floor(d_base/4))
std::size_t conditional_adapter_dim(std::size_t d_base);  // max(16, floor(d_base/8))

// Extracted-feature schedule of the alternate placement: max(8, floor(d_base*i/n)), 1 <= i <= n.
std::size_t alternate_vision_dim(std::size_t d_base, std::size_t n, std::size_t i);
std::size_t alternate_text_dim(std::size_t d_base);  // max(16, floor(d_base/4))
std::size_t shared_dim(std::size_t d_base);          // max(32, floor(d_base/2))

}  // namespace telescopic
