#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "telescopic/peft/peft_modules.hpp"

namespace telescopic {

struct AlphaRatio {
  Branch branch = Branch::kVision;
  std::size_t layer = 0;
  Real alpha_attn = 0;
  Real alpha_mlp = 0;
  Real ratio = 0;  // alpha_mlp / alpha_attn
};

struct AlphaReport {
  std::vector<AlphaEntry> rows;
  std::vector<AlphaRatio> ratios;  // encoder layers holding both sites
  std::size_t above = 0;           // alpha > init
  std::size_t below = 0;           // alpha < init
  Real mean_abs_deviation = 0;     // mean |alpha - init|
};

// ConfigError when the plan carries no alpha (LoRA).
AlphaReport alpha_report(const PeftModel& peft);

// branch,layer,position,adapter_dim,alpha
std::string alpha_csv(const AlphaReport& report);
// branch,layer,alpha_attn,alpha_mlp,ratio
std::string alpha_ratio_csv(const AlphaReport& report);
nlohmann::json alpha_summary(const AlphaReport& report);

// Inverse of alpha_csv.
std::vector<AlphaEntry> parse_alpha_csv(const std::string& text);

}  // namespace telescopic
