#pragma once

#include <cstddef>
#include <string>

#include "telescopic/core/rng.hpp"
#include "telescopic/model/layers.hpp"
#include "telescopic/model/params.hpp"

namespace telescopic {

inline constexpr Real kAlphaInit = Real(0.1);
inline constexpr Real kAdapterDropout = Real(0.1);

struct AdapterParams {
  Linear down;  // d -> d'
  LayerNormWeights norm;
  Linear up;    // d' -> d
  Tensor alpha;  // one element

  std::size_t width() const { return down.in_features(); }
  std::size_t bottleneck() const { return down.out_features(); }
};

// Registers `name`.{down,norm,up,alpha}. The up-projection starts at zero so
// a freshly attached adapter leaves the host network unchanged.
AdapterParams make_adapter(ParamSet& params, const std::string& name, std::size_t d, std::size_t bottleneck,
                           RngStream& rng);

// f + alpha * up(dropout(silu(norm(down(f))))) over the last axis of f.
Tensor adapter_forward(const Tensor& f, const AdapterParams& p, bool training, RngStream& rng,
                       Real dropout_p = kAdapterDropout);

}  // namespace telescopic
