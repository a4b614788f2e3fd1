#include "telescopic/peft/plan.hpp"

#include <cstdlib>
#include <set>
#include <tuple>

#include "telescopic/core/errors.hpp"
#include "telescopic/peft/budget.hpp"
#include "telescopic/peft/schedule.hpp"

namespace telescopic {

using nlohmann::json;

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kTelescopic: return "telescopic";
    case Strategy::kUniform: return "uniform";
    case Strategy::kAlternate: return "alternate";
    case Strategy::kLora: return "lora";
  }
  return "?";
}

Strategy parse_strategy(const std::string& s) {
  if (s == "telescopic") return Strategy::kTelescopic;
  if (s == "uniform") return Strategy::kUniform;
  if (s == "alternate") return Strategy::kAlternate;
  if (s == "lora") return Strategy::kLora;
  throw UsageError("unknown strategy '" + s + "' (expected telescopic, uniform, alternate or lora)");
}

std::string to_string(PlanConfig c) {
  switch (c) {
    case PlanConfig::kVisionOnly: return "vision_only";
    case PlanConfig::kVisionText: return "vision_text";
    case PlanConfig::kFull: return "full";
  }
  return "?";
}

PlanConfig parse_plan_config(const std::string& s) {
  if (s == "vision_only") return PlanConfig::kVisionOnly;
  if (s == "vision_text") return PlanConfig::kVisionText;
  if (s == "full") return PlanConfig::kFull;
  throw UsageError("unknown plan config '" + s + "' (expected vision_only, vision_text or full)");
}

std::string to_string(SitePosition p) {
  switch (p) {
    case SitePosition::kPostAttention: return "post_attention";
    case SitePosition::kPostMlp: return "post_mlp";
    case SitePosition::kOnFeatures: return "on_features";
    case SitePosition::kOnPooled: return "on_pooled";
    case SitePosition::kOnProjection: return "on_projection";
    case SitePosition::kAttnQuery: return "attn_q";
    case SitePosition::kAttnKey: return "attn_k";
    case SitePosition::kAttnValue: return "attn_v";
    case SitePosition::kAttnOut: return "attn_out";
  }
  return "?";
}

SitePosition parse_site_position(const std::string& s) {
  for (auto p : {SitePosition::kPostAttention, SitePosition::kPostMlp, SitePosition::kOnFeatures, SitePosition::kOnPooled,
                 SitePosition::kOnProjection, SitePosition::kAttnQuery, SitePosition::kAttnKey, SitePosition::kAttnValue,
                 SitePosition::kAttnOut})
    if (to_string(p) == s) return p;
  throw UsageError("unknown site position '" + s + "'");
}

bool is_lora_position(SitePosition p) {
  return p == SitePosition::kAttnQuery || p == SitePosition::kAttnKey || p == SitePosition::kAttnValue ||
         p == SitePosition::kAttnOut;
}

SitePosition site_position(Position p) {
  switch (p) {
    case Position::kPostAttention: return SitePosition::kPostAttention;
    case Position::kPostMlp: return SitePosition::kPostMlp;
    case Position::kOnFeatures: return SitePosition::kOnFeatures;
    case Position::kOnPooled: return SitePosition::kOnPooled;
    case Position::kOnProjection: return SitePosition::kOnProjection;
  }
  throw UsageError("unmapped hook position");
}

Position hook_position(SitePosition p) {
  switch (p) {
    case SitePosition::kPostAttention: return Position::kPostAttention;
    case SitePosition::kPostMlp: return Position::kPostMlp;
    case SitePosition::kOnFeatures: return Position::kOnFeatures;
    case SitePosition::kOnPooled: return Position::kOnPooled;
    case SitePosition::kOnProjection: return Position::kOnProjection;
    default: throw UsageError(to_string(p) + " is a LoRA position, not an adapter hook");
  }
}

SitePosition site_position(Projection p) {
  switch (p) {
    case Projection::kQuery: return SitePosition::kAttnQuery;
    case Projection::kKey: return SitePosition::kAttnKey;
    case Projection::kValue: return SitePosition::kAttnValue;
    case Projection::kOut: return SitePosition::kAttnOut;
  }
  throw UsageError("unmapped projection");
}

Projection lora_projection(SitePosition p) {
  switch (p) {
    case SitePosition::kAttnQuery: return Projection::kQuery;
    case SitePosition::kAttnKey: return Projection::kKey;
    case SitePosition::kAttnValue: return Projection::kValue;
    case SitePosition::kAttnOut: return Projection::kOut;
    default: throw UsageError(to_string(p) + " is not a LoRA position");
  }
}

std::size_t PlacementPlan::count(Branch b) const {
  std::size_t n = 0;
  for (const auto& s : sites) n += s.branch == b;
  return n;
}

void PlacementPlan::validate() const {
  std::set<std::tuple<Branch, std::size_t, SitePosition>> seen;
  for (const auto& s : sites) {
    if (!seen.emplace(s.branch, s.layer, s.position).second)
      throw ConfigError("duplicate plan site " + to_string(s.branch) + "/" + std::to_string(s.layer) + "/" +
                        to_string(s.position));
    if (s.d_adapter == 0) throw ConfigError("plan site with zero width");
  }
}

json to_json(const PlacementPlan& plan) {
  json sites = json::array();
  for (const auto& s : plan.sites)
    sites.push_back({{"branch", to_string(s.branch)},
                     {"layer", s.layer},
                     {"position", to_string(s.position)},
                     {"d_adapter", s.d_adapter}});
  json j = {{"strategy", to_string(plan.strategy)},
            {"config", to_string(plan.config)},
            {"d_base", plan.d_base},
            {"sites", sites},
            {"cross_modal", nullptr},
            {"decoder_enh", nullptr},
            {"lora_rank", nullptr}};
  if (plan.cross_modal) j["cross_modal"] = {{"d_shared", plan.cross_modal->d_shared}, {"heads", plan.cross_modal->heads}};
  if (plan.decoder_enh) j["decoder_enh"] = {{"channels", plan.decoder_enh->channels}};
  if (plan.lora_rank) j["lora_rank"] = *plan.lora_rank;
  return j;
}

PlacementPlan plan_from_json(const json& j) {
  try {
    PlacementPlan p;
    p.strategy = parse_strategy(j.at("strategy").get<std::string>());
    p.config = parse_plan_config(j.at("config").get<std::string>());
    p.d_base = j.at("d_base").get<std::size_t>();
    for (const auto& s : j.at("sites"))
      p.sites.push_back({parse_branch(s.at("branch").get<std::string>()), s.at("layer").get<std::size_t>(),
                         parse_site_position(s.at("position").get<std::string>()), s.at("d_adapter").get<std::size_t>()});
    if (!j.at("cross_modal").is_null())
      p.cross_modal = CrossModalSpec{j["cross_modal"].at("d_shared").get<std::size_t>(),
                                     j["cross_modal"].at("heads").get<std::size_t>()};
    if (!j.at("decoder_enh").is_null())
      p.decoder_enh = DecoderEnhancementSpec{j["decoder_enh"].at("channels").get<std::size_t>()};
    if (!j.at("lora_rank").is_null()) p.lora_rank = j["lora_rank"].get<std::size_t>();
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed placement plan: ") + e.what());
  }
}

std::size_t site_width(const ModelSpec& spec, const AdapterSite& site) {
  switch (site.branch) {
    case Branch::kVision: return spec.vision_dim;
    case Branch::kText: return spec.text_dim;
    case Branch::kConditional: return spec.cond_dim;
  }
  return 0;
}

std::size_t bottleneck_width(const ModelSpec& spec, const AdapterSite& site) {
  if (is_lora_position(site.position)) return site.d_adapter;
  return clip_bottleneck(site.d_adapter, site_width(spec, site));
}

namespace {

PlacementPlan main_plan(const ModelSpec& spec, PlanConfig config, std::size_t d_base, Strategy strategy,
                        const std::vector<std::size_t>& vision_dims) {
  spec.validate();
  PlacementPlan p;
  p.strategy = strategy;
  p.config = config;
  p.d_base = d_base;
  for (std::size_t i = 1; i <= spec.adapted_vision_layers(); ++i) {
    p.sites.push_back({Branch::kVision, i, SitePosition::kPostAttention, vision_dims[i - 1]});
    p.sites.push_back({Branch::kVision, i, SitePosition::kPostMlp, vision_dims[i - 1]});
  }
  if (config != PlanConfig::kVisionOnly) {
    const std::size_t dt = text_adapter_dim(d_base);
    for (std::size_t i = spec.first_adapted_text_layer(); i <= spec.text_layers; ++i) {
      p.sites.push_back({Branch::kText, i, SitePosition::kPostAttention, dt});
      p.sites.push_back({Branch::kText, i, SitePosition::kPostMlp, dt});
    }
  }
  if (config == PlanConfig::kFull)
    p.sites.push_back({Branch::kConditional, 0, SitePosition::kOnProjection, conditional_adapter_dim(d_base)});
  p.validate();
  return p;
}

}  // namespace

PlacementPlan build_main_plan(const ModelSpec& spec, PlanConfig config, std::size_t d_base) {
  return main_plan(spec, config, d_base, Strategy::kTelescopic,
                   telescopic_vision_dims(d_base, spec.adapted_vision_layers()));
}

PlacementPlan build_uniform_plan(const ModelSpec& spec, PlanConfig config, std::size_t d_base, std::size_t vision_dim) {
  if (vision_dim == 0) throw ConfigError("uniform plan width must be positive");
  return main_plan(spec, config, d_base, Strategy::kUniform,
                   std::vector<std::size_t>(spec.adapted_vision_layers(), vision_dim));
}

std::size_t match_uniform_dim(const ModelSpec& spec, PlanConfig config, std::size_t d_base) {
  const auto target = static_cast<long long>(count_trainable(build_main_plan(spec, config, d_base), spec).total);
  // Widths beyond d/4 clip to the same adapter, so the scan stops there.
  std::size_t best = 8;
  long long best_gap = -1;
  for (std::size_t w = 8; w <= std::max<std::size_t>(8, spec.vision_dim / 4); ++w) {
    const auto n = static_cast<long long>(count_trainable(build_uniform_plan(spec, config, d_base, w), spec).total);
    const long long gap = std::llabs(n - target);
    if (best_gap < 0 || gap < best_gap) {
      best = w;
      best_gap = gap;
    }
  }
  return best;
}

PlacementPlan build_budget_matched_uniform_plan(const ModelSpec& spec, PlanConfig config, std::size_t d_base) {
  return build_uniform_plan(spec, config, d_base, match_uniform_dim(spec, config, d_base));
}

PlacementPlan build_alternate_plan(const ModelSpec& spec, PlanConfig config, std::size_t d_base, bool with_cross_modal) {
  spec.validate();
  PlacementPlan p;
  p.strategy = Strategy::kAlternate;
  p.config = config;
  p.d_base = d_base;
  const std::size_t n = spec.extract_layers.size();
  for (std::size_t i = 1; i <= n; ++i)
    p.sites.push_back({Branch::kVision, spec.extract_layers[i - 1], SitePosition::kOnFeatures,
                       alternate_vision_dim(d_base, n, i)});
  if (config != PlanConfig::kVisionOnly)
    p.sites.push_back({Branch::kText, 0, SitePosition::kOnPooled, alternate_text_dim(d_base)});
  if (config == PlanConfig::kFull)
    p.sites.push_back({Branch::kConditional, 0, SitePosition::kOnProjection, conditional_adapter_dim(d_base)});
  if (with_cross_modal) p.cross_modal = CrossModalSpec{shared_dim(d_base), 4};
  p.decoder_enh = DecoderEnhancementSpec{};
  p.validate();
  return p;
}

PlacementPlan build_lora_plan(const ModelSpec& spec, std::size_t rank) {
  spec.validate();
  if (rank == 0) throw ConfigError("LoRA rank must be at least 1");
  PlacementPlan p;
  p.strategy = Strategy::kLora;
  p.lora_rank = rank;
  const SitePosition projections[] = {SitePosition::kAttnQuery, SitePosition::kAttnKey, SitePosition::kAttnValue,
                                      SitePosition::kAttnOut};
  for (std::size_t i = 1; i <= spec.vision_layers; ++i)
    for (auto pos : projections) p.sites.push_back({Branch::kVision, i, pos, rank});
  for (std::size_t i = 1; i <= spec.text_layers; ++i)
    for (auto pos : projections) p.sites.push_back({Branch::kText, i, pos, rank});
  p.validate();
  return p;
}

PlacementPlan build_plan(const ModelSpec& spec, Strategy strategy, PlanConfig config, std::size_t d_base,
                         std::size_t lora_rank, bool with_cross_modal) {
  switch (strategy) {
    case Strategy::kTelescopic: return build_main_plan(spec, config, d_base);
    case Strategy::kUniform: return build_budget_matched_uniform_plan(spec, config, d_base);
    case Strategy::kAlternate: return build_alternate_plan(spec, config, d_base, with_cross_modal);
    case Strategy::kLora: return build_lora_plan(spec, lora_rank);
  }
  throw UsageError("unknown strategy");
}

}  // namespace telescopic
