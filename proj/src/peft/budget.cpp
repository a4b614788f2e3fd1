#include "telescopic/peft/budget.hpp"

#include <sstream>

namespace telescopic {

std::size_t cross_modal_param_count(const ModelSpec& spec, const CrossModalSpec& cm) {
  const std::size_t s = cm.d_shared;
  const std::size_t vision = spec.vision_dim * s + s + 2 * s;
  const std::size_t text = spec.text_dim * s + s + 2 * s;
  const std::size_t attention = 4 * (s * s + s);
  const std::size_t back = s * spec.cond_dim + spec.cond_dim;
  return vision + text + attention + back;
}

std::size_t decoder_enhancement_param_count(const DecoderEnhancementSpec& enh) {
  const std::size_t c = enh.channels;
  return (9 * c + c) + 2 * c + (c + 1);
}

std::string ParamBudget::to_csv() const {
  std::ostringstream os;
  os << "branch,layer,position,d_adapter,count\n";
  for (const auto& r : per_site) os << r.branch << ',' << r.layer << ',' << r.position << ',' << r.d_adapter << ',' << r.count << '\n';
  os << "TOTAL,,,," << total << '\n';
  return os.str();
}

ParamBudget count_trainable(const PlacementPlan& plan, const ModelSpec& geometry) {
  ParamBudget b;
  if (plan.empty()) return b;
  auto add = [&](BudgetRow row) {
    b.per_branch[row.branch] += row.count;
    b.total += row.count;
    b.per_site.push_back(std::move(row));
  };
  for (const auto& site : plan.sites) {
    const std::size_t d = site_width(geometry, site);
    const std::size_t w = bottleneck_width(geometry, site);
    const std::size_t n = is_lora_position(site.position) ? lora_param_count(d, w) : adapter_param_count(d, w);
    add({to_string(site.branch), site.layer, to_string(site.position), w, n});
  }
  if (plan.cross_modal)
    add({"cross_modal", 0, "attention", plan.cross_modal->d_shared, cross_modal_param_count(geometry, *plan.cross_modal)});
  if (plan.decoder_enh)
    add({"decoder", 0, "enhancement", plan.decoder_enh->channels, decoder_enhancement_param_count(*plan.decoder_enh)});
  add({"decoder", 0, "refine_head", Backbone::kRefineChannels, kRefineHeadParams});
  return b;
}

}  // namespace telescopic
