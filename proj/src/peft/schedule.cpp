#include "telescopic/peft/schedule.hpp"

#include <algorithm>
#include <string>

#include "telescopic/core/errors.hpp"

namespace telescopic {

std::size_t clip_bottleneck(std::size_t d_adapter, std::size_t d) {
  if (d < 8) throw ConfigError("adapter host width " + std::to_string(d) + " is below the minimum of 8");
  return std::max<std::size_t>(8, std::min(d_adapter, d / 4));
}

std::vector<std::size_t> telescopic_vision_dims(std::size_t d_base, std::size_t layers) {
  if (d_base < 8 || layers == 0) throw ConfigError("telescopic schedule needs d_base >= 8 and at least one layer");
  std::vector<std::size_t> dims;
  for (std::size_t i = 1; i <= layers; ++i) dims.push_back(std::max<std::size_t>(8, d_base * i / (2 * layers)));
  return dims;
}

std::size_t text_adapter_dim(std::size_t d_base) { return std::max<std::size_t>(8, d_base / 4); }

std::size_t conditional_adapter_dim(std::size_t d_base) { return std::max<std::size_t>(16, d_base / 8); }

std::size_t alternate_vision_dim(std::size_t d_base, std::size_t n, std::size_t i) {
  if (n == 0 || i == 0 || i > n)
    throw ConfigError("alternate schedule index " + std::to_string(i) + " outside 1.." + std::to_string(n));
  return std::max<std::size_t>(8, d_base * i / n);
}

std::size_t alternate_text_dim(std::size_t d_base) { return std::max<std::size_t>(16, d_base / 4); }

std::size_t shared_dim(std::size_t d_base) { return std::max<std::size_t>(32, d_base / 2); }

}  // namespace telescopic
