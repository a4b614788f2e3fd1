#include "telescopic/peft/adapter.hpp"

#include "telescopic/core/errors.hpp"

namespace telescopic {

AdapterParams make_adapter(ParamSet& params, const std::string& name, std::size_t d, std::size_t bottleneck,
                           RngStream& rng) {
  AdapterParams a;
  a.down = make_linear(params, name + ".down", d, bottleneck, rng);
  a.norm = make_layer_norm(params, name + ".norm", bottleneck);
  a.up.w = params.add(name + ".up.w", Tensor::zeros({bottleneck, d}));
  a.up.b = params.add(name + ".up.b", Tensor::zeros({d}));
  a.alpha = params.add(name + ".alpha", Tensor::scalar(kAlphaInit));
  return a;
}

Tensor adapter_forward(const Tensor& f, const AdapterParams& p, bool training, RngStream& rng, Real dropout_p) {
  if (f.rank() == 0 || f.shape().back() != p.width())
    throw DimensionError("adapter_forward: input " + shape_str(f.shape()) + " does not end in width " +
                         std::to_string(p.width()));
  Tensor h = ops::silu(p.norm(p.down(f)));
  h = ops::dropout(h, dropout_p, training, rng);
  return ops::add(f, ops::scale_by(p.up(h), p.alpha));
}

}  // namespace telescopic
