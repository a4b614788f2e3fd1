#include "run_config.hpp"

#include <set>

#include "telescopic/core/errors.hpp"
#include "telescopic/core/serialize.hpp"

namespace telescopic::cli {

TrainConfig RunConfig::default_pretrain_config() {
  TrainConfig c;
  c.lr = 2e-3;
  c.max_epochs = 15;
  c.seeds = {11};
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& [d, b] : c.sweep_grid) grid.push_back({d, b});
  return {{"model", to_json(c.model)},
          {"model_seed", c.model_seed},
          {"pretrain", to_json(c.pretrain)},
          {"finetune", to_json(c.finetune)},
          {"strategy", to_string(c.strategy)},
          {"peft_config", to_string(c.peft_config)},
          {"d_base", c.d_base},
          {"lora_rank", c.lora_rank},
          {"cross_modal", c.cross_modal},
          {"scene", to_json(c.scene)},
          {"data_seed", c.data_seed},
          {"base_samples", c.base_samples},
          {"shift_samples", c.shift_samples},
          {"shift", c.shift},
          {"base_data", c.base_data.string()},
          {"shift_data", c.shift_data.string()},
          {"checkpoint", c.checkpoint.string()},
          {"sweep_grid", grid}};
}

RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key)) throw ConfigError("unknown run config key '" + key + "'");
  auto path = [&](const char* key, std::filesystem::path& field) {
    if (!j.contains(key)) return;
    const std::string s = j.at(key).get<std::string>();
    field = s.empty() ? std::filesystem::path() : std::filesystem::path(s);
    if (!field.empty() && field.is_relative()) field = base_dir / field;
  };
  try {
    if (j.contains("model")) {
      c.model = model_spec_from_json(j.at("model"));
      c.model_explicit = true;
    }
    if (j.contains("model_seed")) c.model_seed = j.at("model_seed").get<std::uint64_t>();
    if (j.contains("pretrain")) {
      // Pretrain keys override the pretrain defaults, not the generic ones.
      nlohmann::json merged = to_json(RunConfig::default_pretrain_config());
      for (const auto& [key, value] : j.at("pretrain").items()) {
        if (!merged.contains(key)) throw ConfigError("unknown train config key '" + key + "'");
        merged[key] = value;
      }
      c.pretrain = train_config_from_json(merged);
    }
    if (j.contains("finetune")) c.finetune = train_config_from_json(j.at("finetune"));
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    if (j.contains("peft_config")) c.peft_config = parse_plan_config(j.at("peft_config").get<std::string>());
    if (j.contains("d_base")) c.d_base = j.at("d_base").get<std::size_t>();
    if (j.contains("lora_rank")) c.lora_rank = j.at("lora_rank").get<std::size_t>();
    if (j.contains("cross_modal")) c.cross_modal = j.at("cross_modal").get<bool>();
    if (j.contains("scene")) c.scene = scene_spec_from_json(j.at("scene"));
    if (j.contains("data_seed")) c.data_seed = j.at("data_seed").get<std::uint64_t>();
    if (j.contains("base_samples")) c.base_samples = j.at("base_samples").get<std::size_t>();
    if (j.contains("shift_samples")) c.shift_samples = j.at("shift_samples").get<std::size_t>();
    if (j.contains("shift")) c.shift = j.at("shift").get<std::string>();
    path("base_data", c.base_data);
    path("shift_data", c.shift_data);
    path("checkpoint", c.checkpoint);
    if (j.contains("sweep_grid")) {
      c.sweep_grid.clear();
      for (const auto& cell : j.at("sweep_grid")) {
        if (!cell.is_array() || cell.size() != 2) throw ConfigError("sweep_grid cells are [lambda_d, lambda_bce] pairs");
        c.sweep_grid.emplace_back(cell[0].get<Real>(), cell[1].get<Real>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  parse_shift_chain(c.shift);
  if (c.d_base == 0) throw ConfigError("d_base must be positive");
  if (c.lora_rank == 0) throw ConfigError("lora_rank must be positive");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = io::read_json_file(path);
  } catch (const IoError&) {
    throw UsageError("config file not found: " + path.string());
  }
  return run_config_from_json(j, path.parent_path());
}

}  // namespace telescopic::cli
