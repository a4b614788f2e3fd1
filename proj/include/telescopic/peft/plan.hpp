#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "telescopic/model/backbone.hpp"
#include "telescopic/model/model_spec.hpp"

namespace telescopic {

enum class Strategy { kTelescopic, kUniform, kAlternate, kLora };
// Table-3 style component selection: vision only, + text, + conditional.
enum class PlanConfig { kVisionOnly, kVisionText, kFull };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& s);  // UsageError
std::string to_string(PlanConfig c);
PlanConfig parse_plan_config(const std::string& s);  // UsageError

// Adapter sites use the backbone hook positions; LoRA sites name the
// attention projection they modify.
enum class SitePosition {
  kPostAttention,
  kPostMlp,
  kOnFeatures,
  kOnPooled,
  kOnProjection,
  kAttnQuery,
  kAttnKey,
  kAttnValue,
  kAttnOut,
};

std::string to_string(SitePosition p);
SitePosition parse_site_position(const std::string& s);
bool is_lora_position(SitePosition p);
SitePosition site_position(Position p);
Position hook_position(SitePosition p);      // UsageError for LoRA positions
SitePosition site_position(Projection p);
Projection lora_projection(SitePosition p);  // UsageError for adapter positions

struct AdapterSite {
  Branch branch = Branch::kVision;
  std::size_t layer = 0;  // 1-based encoder layer; 0 for pooled/projection sites
  SitePosition position = SitePosition::kPostAttention;
  // Scheduled width before clipping (the LoRA rank for LoRA sites).
  std::size_t d_adapter = 0;
  bool operator==(const AdapterSite&) const = default;
};

struct CrossModalSpec {
  std::size_t d_shared = 32;
  std::size_t heads = 4;
  bool operator==(const CrossModalSpec&) const = default;
};

struct DecoderEnhancementSpec {
  std::size_t channels = 8;
  bool operator==(const DecoderEnhancementSpec&) const = default;
};

struct PlacementPlan {
  Strategy strategy = Strategy::kTelescopic;
  PlanConfig config = PlanConfig::kFull;
  std::size_t d_base = 64;
  std::vector<AdapterSite> sites;
  std::optional<CrossModalSpec> cross_modal;
  std::optional<DecoderEnhancementSpec> decoder_enh;
  std::optional<std::size_t> lora_rank;

  // No sites and no auxiliary blocks: the zero-shot configuration.
  bool empty() const { return sites.empty() && !cross_modal && !decoder_enh; }
  std::size_t count(Branch b) const;
  // Throws ConfigError on duplicate (branch, layer, position) triples.
  void validate() const;
  bool operator==(const PlacementPlan&) const = default;
};

nlohmann::json to_json(const PlacementPlan& plan);
PlacementPlan plan_from_json(const nlohmann::json& j);

// Host width of the representation an adapter at this site wraps.
std::size_t site_width(const ModelSpec& spec, const AdapterSite& site);
// Effective bottleneck width d' of an adapter site.
std::size_t bottleneck_width(const ModelSpec& spec, const AdapterSite& site);

// Two adapters per adapted vision layer with the telescopic schedule; the
// last three text layers at the text width; one conditional adapter on the
// projected embedding.
PlacementPlan build_main_plan(const ModelSpec& spec, PlanConfig config, std::size_t d_base = 64);
// Same site set with one constant vision width.
PlacementPlan build_uniform_plan(const ModelSpec& spec, PlanConfig config, std::size_t d_base, std::size_t vision_dim);
// Constant vision width whose total count best matches the telescopic plan.
std::size_t match_uniform_dim(const ModelSpec& spec, PlanConfig config, std::size_t d_base);
PlacementPlan build_budget_matched_uniform_plan(const ModelSpec& spec, PlanConfig config, std::size_t d_base);
// Adapters on the extracted features, the pooled text vector and the
// projected embedding, plus the decoder enhancement and optional
// cross-modal block.
PlacementPlan build_alternate_plan(const ModelSpec& spec, PlanConfig config, std::size_t d_base, bool with_cross_modal);
// Rank-r pairs on q/k/v/out of every attention block in both encoders.
PlacementPlan build_lora_plan(const ModelSpec& spec, std::size_t rank);

PlacementPlan build_plan(const ModelSpec& spec, Strategy strategy, PlanConfig config, std::size_t d_base,
                         std::size_t lora_rank, bool with_cross_modal);

}  // namespace telescopic
