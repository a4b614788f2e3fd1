#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "telescopic/model/model_spec.hpp"
#include "telescopic/peft/plan.hpp"

namespace telescopic {

inline constexpr std::size_t kRefineHeadParams = 45;  // conv3x3 1->4 with bias, conv1x1 4->1 with bias

// W_down, b_down, norm gain and bias, W_up, b_up, alpha.
constexpr std::size_t adapter_param_count(std::size_t d, std::size_t bottleneck) {
  return 2 * d * bottleneck + 3 * bottleneck + d + 1;
}
constexpr std::size_t lora_param_count(std::size_t d, std::size_t rank) { return 2 * d * rank; }
std::size_t cross_modal_param_count(const ModelSpec& spec, const CrossModalSpec& cm);
std::size_t decoder_enhancement_param_count(const DecoderEnhancementSpec& enh);

struct BudgetRow {
  std::string branch;
  std::size_t layer = 0;
  std::string position;
  std::size_t d_adapter = 0;  // effective width (bottleneck, rank, shared dim or channels)
  std::size_t count = 0;
};

struct ParamBudget {
  std::vector<BudgetRow> per_site;
  std::map<std::string, std::size_t> per_branch;
  std::size_t total = 0;

  // branch,layer,position,d_adapter,count with a closing TOTAL row.
  std::string to_csv() const;
};

// Exact trainable-scalar count of a plan on the given geometry, including
// auxiliary blocks and the refinement head (trained whenever a plan is
// attached). An empty plan counts 0.
ParamBudget count_trainable(const PlacementPlan& plan, const ModelSpec& geometry);

}  // namespace telescopic
