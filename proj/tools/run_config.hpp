#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "telescopic/data/synthdata.hpp"
#include "telescopic/model/model_spec.hpp"
#include "telescopic/peft/plan.hpp"
#include "telescopic/train/trainer.hpp"

namespace telescopic::cli {

// Everything a command may need. Paths are resolved against the directory of
// the config file they came from.
struct RunConfig {
  ModelSpec model;
  // Set when the config file names a model; commands that load a checkpoint
  // then insist the two agree.
  bool model_explicit = false;
  std::uint64_t model_seed = 7;
  TrainConfig pretrain = default_pretrain_config();
  TrainConfig finetune;

  Strategy strategy = Strategy::kTelescopic;
  PlanConfig peft_config = PlanConfig::kFull;
  std::size_t d_base = 64;
  std::size_t lora_rank = 4;
  bool cross_modal = false;

  SceneSpec scene;
  std::uint64_t data_seed = 1;
  std::size_t base_samples = 2000;
  std::size_t shift_samples = 400;
  std::string shift = "invert+gaussian_noise:0.1";

  std::filesystem::path base_data;
  std::filesystem::path shift_data;
  std::filesystem::path checkpoint;

  // (lambda_dice, lambda_bce) cells for sweep-loss.
  std::vector<std::pair<Real, Real>> sweep_grid{{0, 1}, {1, 0}, {1.5, 1}, {0.5, 0.5}, {1, 1.5}};

  static TrainConfig default_pretrain_config();
};

nlohmann::json to_json(const RunConfig& c);
// Rejects unknown keys at every level. Relative paths resolve against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace telescopic::cli
