#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "run_config.hpp"
#include "telescopic/core/errors.hpp"
#include "telescopic/core/serialize.hpp"
#include "telescopic/peft/alpha_report.hpp"
#include "telescopic/peft/budget.hpp"
#include "telescopic/peft/schedule.hpp"

namespace telescopic::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<std::string> peft_config;
  std::optional<std::size_t> d_base;
  std::optional<std::size_t> lora_rank;
  std::string geometry = "toy";
  std::size_t jobs = 1;
  std::optional<std::size_t> max_epochs;
  bool alpha_zero = false;
  std::string checkpoint;
  std::string data;
  std::string split = "test";
};

// Reference totals the plan command reports its deltas against.
std::optional<double> reference_total(Strategy s, PlanConfig c, std::size_t lora_rank) {
  if (s == Strategy::kLora) return lora_rank == 4 ? std::optional<double>(585000) : std::nullopt;
  if (s != Strategy::kTelescopic) return std::nullopt;
  switch (c) {
    case PlanConfig::kVisionOnly: return 498000;
    case PlanConfig::kVisionText: return 593000;
    case PlanConfig::kFull: return 613000;
  }
  return std::nullopt;
}

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (o.strategy) c.strategy = parse_strategy(*o.strategy);
  if (o.peft_config) c.peft_config = parse_plan_config(*o.peft_config);
  if (o.d_base) c.d_base = *o.d_base;
  if (o.lora_rank) c.lora_rank = *o.lora_rank;
  if (o.max_epochs) {
    c.pretrain.max_epochs = *o.max_epochs;
    c.finetune.max_epochs = *o.max_epochs;
  }
  if (o.seed) {
    c.pretrain.seeds = {*o.seed};
    c.finetune.seeds = {*o.seed};
    c.data_seed = *o.seed;
  }
  if (c.d_base == 0 || c.lora_rank == 0) throw UsageError("--d-base and --lora-rank must be positive");
  c.pretrain.validate();
  c.finetune.validate();
  return c;
}

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw UsageError("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

void write_run_meta(const fs::path& out, const std::string& command, const RunConfig& cfg, const Options& o) {
  nlohmann::json options = {{"geometry", o.geometry}, {"jobs", o.jobs}, {"alpha_zero", o.alpha_zero}};
  if (!o.checkpoint.empty()) options["checkpoint"] = o.checkpoint;
  if (!o.data.empty()) options["data"] = o.data;
  if (command == "eval") options["split"] = o.split;
  io::write_json_file(out / "run_meta.json", {{"command", command},
                                              {"artifact_version", kArtifactVersion},
                                              {"format_version", io::kFormatVersion},
                                              {"config", to_json(cfg)},
                                              {"options", options}});
}

nlohmann::json scores_json(double dice, double iou) { return {{"dice", dice}, {"iou", iou}}; }

Dataset load_named(const fs::path& path, const char* key) {
  if (path.empty()) throw UsageError(fmt::format("config names no {} dataset", key));
  if (!fs::exists(path / "manifest.json")) throw UsageError("dataset not found: " + path.string());
  return load_dataset(path);
}

AdaptedModel load_pretrained(const fs::path& path, const RunConfig& cfg) {
  if (path.empty()) throw UsageError("no pretrained checkpoint given");
  if (!fs::exists(path / "manifest.json")) throw UsageError("checkpoint not found: " + path.string());
  AdaptedModel m = load_adapted(path);
  if (cfg.model_explicit && !(m.model->spec() == cfg.model))
    throw ConfigError("checkpoint " + path.string() + " was trained with a different model spec");
  return m;
}

void check_compatible(const ModelSpec& spec, const Dataset& data) {
  if (data.scene.image_size != spec.image_size)
    throw ConfigError(fmt::format("dataset images are {}px but the model expects {}px", data.scene.image_size,
                                  spec.image_size));
}

// One fine-tuning cell: a plan (or none for zero-shot) trained per seed.
struct CellSpec {
  std::string name;
  std::string config_label;
  std::optional<PlacementPlan> plan;  // nullopt: zero-shot
  TrainConfig train;
};

struct CellResult {
  bool ok = false;
  std::string error;
  std::size_t trainable_params = 0;
  std::map<std::uint64_t, EvalResult> per_seed;
  double mean_dice = 0, mean_iou = 0;
};

CellResult run_cell(const CellSpec& cell, const fs::path& checkpoint, const RunConfig& cfg, const Dataset& data,
                    const fs::path& out, bool alpha_zero) {
  CellResult r;
  try {
    for (std::uint64_t seed : cell.train.seeds) {
      AdaptedModel m = load_pretrained(checkpoint, cfg);
      if (m.peft) throw ConfigError("checkpoint " + checkpoint.string() + " already carries a plan");
      const ModelSpec& spec = m.model->spec();
      check_compatible(spec, data);
      const fs::path seed_dir = out / fmt::format("seed_{}", seed);
      fs::create_directories(seed_dir);
      EvalResult test;
      if (!cell.plan) {
        test = evaluate(*m.model, nullptr, data, Split::kTest, cell.train);
      } else {
        PeftModel peft(*cell.plan, spec, seed);
        r.trainable_params = count_trainable(*cell.plan, spec).total;
        if (alpha_zero) {
          peft.zero_alpha();
        } else {
          TrainResult tr = train_model(*m.model, &peft, data, cell.train, seed, TrainMode::kFinetune);
          if (tr.optimizer_scalars != r.trainable_params)
            throw Error(fmt::format("optimizer updates {} scalars but the plan budget counts {}",
                                    tr.optimizer_scalars, r.trainable_params));
          io::write_text_file(seed_dir / "history.csv", tr.history.to_csv());
        }
        test = evaluate(*m.model, &peft, data, Split::kTest, cell.train);
        save_adapted(seed_dir / "checkpoint", *m.model, peft, {{"seed", seed}});
      }
      io::write_text_file(seed_dir / "test_per_sample.csv", test.per_sample_csv());
      io::write_json_file(seed_dir / "metrics.json", test.to_json());
      r.mean_dice += test.dice;
      r.mean_iou += test.iou;
      r.per_seed[seed] = std::move(test);
    }
    r.mean_dice /= double(cell.train.seeds.size());
    r.mean_iou /= double(cell.train.seeds.size());
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  return r;
}

// Runs independent cells on up to `jobs` threads; results keep cell order.
std::vector<CellResult> run_cells(const std::vector<CellSpec>& cells, const fs::path& checkpoint,
                                  const RunConfig& cfg, const Dataset& data, const fs::path& out, std::size_t jobs) {
  std::vector<CellResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++)
      results[i] = run_cell(cells[i], checkpoint, cfg, data, out / "cells" / cells[i].name, false);
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, cells.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return results;
}

nlohmann::json summary_json(const nlohmann::json& config, const std::vector<std::uint64_t>& seeds,
                            const CellResult& r) {
  nlohmann::json per_seed = nlohmann::json::object();
  for (const auto& [seed, e] : r.per_seed) per_seed[std::to_string(seed)] = scores_json(e.dice, e.iou);
  return {{"config", config},
          {"seeds", seeds},
          {"per_seed", per_seed},
          {"mean", scores_json(r.mean_dice, r.mean_iou)},
          {"trainable_params", r.trainable_params}};
}

// ---- commands ----

int cmd_generate_data(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const fs::path dir = require_out(o);
  const Dataset base = generate_dataset(dir / "base", cfg.scene, {}, cfg.base_samples, cfg.data_seed);
  const ShiftChain shift = parse_shift_chain(cfg.shift);
  const Dataset shifted = generate_dataset(dir / "shifted", cfg.scene, shift, cfg.shift_samples, cfg.data_seed + 1);
  write_run_meta(dir, "generate-data", cfg, o);
  out << fmt::format("wrote {} base samples to {}\n", base.samples.size(), (dir / "base").string());
  out << fmt::format("wrote {} shifted samples ({}) to {}\n", shifted.samples.size(), to_string(shift),
                     (dir / "shifted").string());
  return kExitOk;
}

int cmd_plan(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  ModelSpec geometry;
  if (o.geometry == "paper")
    geometry = ModelSpec::paper_geometry();
  else if (o.geometry == "toy")
    geometry = cfg.model;
  else
    throw UsageError("--geometry must be toy or paper");
  const PlacementPlan plan = build_plan(geometry, cfg.strategy, cfg.peft_config, cfg.d_base, cfg.lora_rank,
                                        cfg.cross_modal);
  const ParamBudget budget = count_trainable(plan, geometry);

  out << fmt::format("strategy {}  config {}  geometry {}  d_base {}\n", to_string(cfg.strategy),
                     to_string(cfg.peft_config), o.geometry, cfg.d_base);
  if (cfg.strategy == Strategy::kTelescopic || cfg.strategy == Strategy::kUniform) {
    out << "vision layer  scheduled  effective\n";
    for (const AdapterSite& s : plan.sites)
      if (s.branch == Branch::kVision && s.position == SitePosition::kPostAttention)
        out << fmt::format("{:>12}  {:>9}  {:>9}\n", s.layer, s.d_adapter, bottleneck_width(geometry, s));
  }
  out << fmt::format("{} sites\n", plan.sites.size());
  out << fmt::format("{:<12} {:>5} {:<14} {:>9} {:>9}\n", "branch", "layer", "position", "d_adapter", "count");
  for (const BudgetRow& row : budget.per_site)
    out << fmt::format("{:<12} {:>5} {:<14} {:>9} {:>9}\n", row.branch, row.layer, row.position, row.d_adapter,
                       row.count);
  for (const auto& [branch, n] : budget.per_branch) out << fmt::format("branch {:<12} {:>9}\n", branch, n);
  out << fmt::format("TOTAL {}\n", budget.total);
  if (o.geometry == "paper") {
    if (auto ref = reference_total(cfg.strategy, cfg.peft_config, cfg.lora_rank)) {
      const double delta = (double(budget.total) - *ref) / *ref * 100.0;
      out << fmt::format("WARN total {} vs reference {:.0f}: delta {:+.2f}%\n", budget.total, *ref, delta);
    }
  }
  if (!o.out.empty()) {
    const fs::path dir = require_out(o);
    io::write_text_file(dir / "budget.csv", budget.to_csv());
    io::write_json_file(dir / "plan.json", to_json(plan));
    write_run_meta(dir, "plan", cfg, o);
  }
  return kExitOk;
}

int cmd_pretrain(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const fs::path dir = require_out(o);
  const Dataset data = load_named(cfg.base_data, "base_data");
  check_compatible(cfg.model, data);
  write_run_meta(dir, "pretrain", cfg, o);
  CellResult r;
  for (std::uint64_t seed : cfg.pretrain.seeds) {
    Backbone model(cfg.model, cfg.model_seed);
    const TrainResult tr = train_model(model, nullptr, data, cfg.pretrain, seed, TrainMode::kPretrain);
    const EvalResult test = evaluate(model, nullptr, data, Split::kTest, cfg.pretrain);
    const fs::path seed_dir = dir / fmt::format("seed_{}", seed);
    fs::create_directories(seed_dir);
    model.save(seed_dir / "checkpoint", {{"seed", seed}});
    io::write_text_file(seed_dir / "history.csv", tr.history.to_csv());
    io::write_text_file(seed_dir / "test_per_sample.csv", test.per_sample_csv());
    out << fmt::format("seed {}: {} epochs (best {}), base test DSC {:.2f} IoU {:.2f}\n", seed,
                       tr.history.epochs.size(), tr.history.best_epoch, test.dice, test.iou);
    r.mean_dice += test.dice;
    r.mean_iou += test.iou;
    r.trainable_params = tr.optimizer_scalars;
    r.per_seed[seed] = test;
  }
  r.mean_dice /= double(cfg.pretrain.seeds.size());
  r.mean_iou /= double(cfg.pretrain.seeds.size());
  io::write_json_file(dir / "summary.json", summary_json(to_json(cfg.pretrain), cfg.pretrain.seeds, r));
  return kExitOk;
}

int cmd_finetune(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const fs::path dir = require_out(o);
  const fs::path ckpt = o.checkpoint.empty() ? cfg.checkpoint : fs::path(o.checkpoint);
  const Dataset data = load_named(cfg.shift_data, "shift_data");
  const AdaptedModel probe = load_pretrained(ckpt, cfg);
  if (probe.peft) throw ConfigError("checkpoint " + ckpt.string() + " already carries a plan");
  const ModelSpec spec = probe.model->spec();
  check_compatible(spec, data);
  write_run_meta(dir, "finetune", cfg, o);

  const PlacementPlan plan = build_plan(spec, cfg.strategy, cfg.peft_config, cfg.d_base, cfg.lora_rank,
                                        cfg.cross_modal);
  const EvalResult zero_shot = evaluate(*probe.model, nullptr, data, Split::kTest, cfg.finetune);
  const CellResult r = run_cell({"finetune", to_string(cfg.peft_config), plan, cfg.finetune}, ckpt, cfg, data, dir,
                                o.alpha_zero);
  if (!r.ok) throw Error(r.error);
  for (const auto& [seed, e] : r.per_seed)
    out << fmt::format("seed {}: shifted test DSC {:.2f} IoU {:.2f}\n", seed, e.dice, e.iou);
  out << fmt::format("zero-shot DSC {:.2f}; fine-tuned mean DSC {:.2f} IoU {:.2f}; trainable {}\n", zero_shot.dice,
                     r.mean_dice, r.mean_iou, r.trainable_params);
  nlohmann::json summary = summary_json(to_json(cfg.finetune), cfg.finetune.seeds, r);
  summary["strategy"] = to_string(cfg.strategy);
  summary["peft_config"] = to_string(cfg.peft_config);
  summary["zero_shot"] = scores_json(zero_shot.dice, zero_shot.iou);
  summary["alpha_zero"] = o.alpha_zero;
  io::write_json_file(dir / "summary.json", summary);
  io::write_json_file(dir / "plan.json", to_json(plan));
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const fs::path dir = require_out(o);
  const fs::path ckpt = o.checkpoint.empty() ? cfg.checkpoint : fs::path(o.checkpoint);
  if (o.data.empty()) throw UsageError("--data is required");
  const Dataset data = load_named(o.data, "evaluation");
  AdaptedModel m = load_pretrained(ckpt, cfg);
  check_compatible(m.model->spec(), data);
  const Split split = parse_split(o.split);
  write_run_meta(dir, "eval", cfg, o);
  const EvalResult r = evaluate(*m.model, m.peft.get(), data, split, cfg.finetune);
  io::write_json_file(dir / "metrics.json", r.to_json());
  io::write_text_file(dir / "per_sample.csv", r.per_sample_csv());
  out << fmt::format("{} samples: DSC {:.2f} IoU {:.2f}\n", r.per_sample.size(), r.dice, r.iou);
  return kExitOk;
}

int cmd_compare(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(o);
  const fs::path dir = require_out(o);
  const fs::path ckpt = o.checkpoint.empty() ? cfg.checkpoint : fs::path(o.checkpoint);
  const Dataset data = load_named(cfg.shift_data, "shift_data");
  const ModelSpec spec = load_pretrained(ckpt, cfg).model->spec();
  check_compatible(spec, data);
  write_run_meta(dir, "compare", cfg, o);

  const TrainConfig& t = cfg.finetune;
  std::vector<CellSpec> cells;
  cells.push_back({"zero_shot", "-", std::nullopt, t});
  for (PlanConfig c : {PlanConfig::kVisionOnly, PlanConfig::kVisionText, PlanConfig::kFull})
    cells.push_back({"telescopic_" + to_string(c), to_string(c),
                     build_plan(spec, Strategy::kTelescopic, c, cfg.d_base, cfg.lora_rank, false), t});
  cells.push_back({"uniform_matched", "full", build_budget_matched_uniform_plan(spec, PlanConfig::kFull, cfg.d_base),
                   t});
  cells.push_back({fmt::format("lora_r{}", cfg.lora_rank), "-", build_lora_plan(spec, cfg.lora_rank), t});
  cells.push_back({"alternate", "full", build_alternate_plan(spec, PlanConfig::kFull, cfg.d_base, true), t});

  const std::vector<CellResult> results = run_cells(cells, ckpt, cfg, data, dir, o.jobs);
  std::string csv = "strategy,config,trainable_params,mean_dice,mean_iou,status\n";
  std::string table = fmt::format("{:<24} {:<12} {:>10} {:>9} {:>9} {}\n", "strategy", "config", "params", "DSC",
                                  "IoU", "status");
  bool failed = false;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const CellResult& r = results[i];
    const std::size_t params = cells[i].plan ? count_trainable(*cells[i].plan, spec).total : 0;
    if (!r.ok) {
      failed = true;
      err << fmt::format("{} failed: {}\n", cells[i].name, r.error);
      csv += fmt::format("{},{},{},,,FAILED\n", cells[i].name, cells[i].config_label, params);
      table += fmt::format("{:<24} {:<12} {:>10} {:>9} {:>9} FAILED\n", cells[i].name, cells[i].config_label, params,
                           "-", "-");
      continue;
    }
    csv += fmt::format("{},{},{},{},{},ok\n", cells[i].name, cells[i].config_label, params, r.mean_dice, r.mean_iou);
    table += fmt::format("{:<24} {:<12} {:>10} {:>9.2f} {:>9.2f} ok\n", cells[i].name, cells[i].config_label, params,
                         r.mean_dice, r.mean_iou);
  }
  if (results[0].ok)
    for (std::size_t i = 1; i < results.size(); ++i)
      if (results[i].ok && results[i].mean_dice <= results[0].mean_dice)
        table += fmt::format("WARN zero-shot DSC {:.2f} is not below {} ({:.2f})\n", results[0].mean_dice,
                             cells[i].name, results[i].mean_dice);
  io::write_text_file(dir / "compare.csv", csv);
  io::write_text_file(dir / "compare.txt", table);
  out << table;
  return failed ? kExitPartial : kExitOk;
}

int cmd_sweep_loss(const Options& o, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(o);
  for (const auto& [d, b] : cfg.sweep_grid) {
    if (d < 0 || b < 0) throw UsageError(fmt::format("loss weights ({}, {}) must be non-negative", d, b));
    if (d == 0 && b == 0) throw UsageError("grid cell (0, 0) has no loss term");
  }
  const fs::path dir = require_out(o);
  const fs::path ckpt = o.checkpoint.empty() ? cfg.checkpoint : fs::path(o.checkpoint);
  const Dataset data = load_named(cfg.shift_data, "shift_data");
  const ModelSpec spec = load_pretrained(ckpt, cfg).model->spec();
  check_compatible(spec, data);
  write_run_meta(dir, "sweep-loss", cfg, o);

  const PlacementPlan plan = build_plan(spec, cfg.strategy, cfg.peft_config, cfg.d_base, cfg.lora_rank,
                                        cfg.cross_modal);
  std::vector<CellSpec> cells;
  for (const auto& [d, b] : cfg.sweep_grid) {
    TrainConfig t = cfg.finetune;
    t.lambda_dice = d;
    t.lambda_bce = b;
    cells.push_back({fmt::format("ld{}_lb{}", d, b), to_string(cfg.peft_config), plan, t});
  }
  const std::vector<CellResult> results = run_cells(cells, ckpt, cfg, data, dir, o.jobs);
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < results.size(); ++i)
    if (results[i].ok && (!best || results[i].mean_dice > results[*best].mean_dice)) best = i;

  std::string csv = "lambda_d,lambda_bce,mean_dice,mean_iou,trainable_params\n";
  bool failed = false;
  out << fmt::format("  {:>8} {:>10} {:>9} {:>9} {:>10}\n", "lambda_d", "lambda_bce", "DSC", "IoU", "params");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto [d, b] = cfg.sweep_grid[i];
    const CellResult& r = results[i];
    if (!r.ok) {
      failed = true;
      err << fmt::format("cell ({}, {}) failed: {}\n", d, b, r.error);
      csv += fmt::format("{},{},,,{}\n", d, b, count_trainable(plan, spec).total);
      out << fmt::format("  {:>8} {:>10} {:>9} {:>9} {:>10} FAILED\n", d, b, "-", "-", count_trainable(plan, spec).total);
      continue;
    }
    csv += fmt::format("{},{},{},{},{}\n", d, b, r.mean_dice, r.mean_iou, r.trainable_params);
    out << fmt::format("{} {:>8} {:>10} {:>9.2f} {:>9.2f} {:>10}\n", best == i ? '*' : ' ', d, b, r.mean_dice,
                       r.mean_iou, r.trainable_params);
  }
  io::write_text_file(dir / "sweep.csv", csv);
  return failed ? kExitPartial : kExitOk;
}

int cmd_report_alpha(const Options& o, std::ostream& out) {
  const RunConfig cfg = resolve_config(o);
  const fs::path dir = require_out(o);
  const fs::path ckpt = o.checkpoint.empty() ? cfg.checkpoint : fs::path(o.checkpoint);
  AdaptedModel m = load_pretrained(ckpt, cfg);
  if (!m.peft) throw ConfigError("checkpoint " + ckpt.string() + " holds no adapter plan");
  const AlphaReport report = alpha_report(*m.peft);
  write_run_meta(dir, "report-alpha", cfg, o);
  io::write_text_file(dir / "alpha.csv", alpha_csv(report));
  io::write_text_file(dir / "alpha_ratios.csv", alpha_ratio_csv(report));
  io::write_json_file(dir / "alpha_summary.json", alpha_summary(report));
  out << fmt::format("{:<12} {:>5} {:<14} {:>4} {:>12}\n", "branch", "layer", "position", "d'", "alpha");
  for (const AlphaEntry& e : report.rows)
    out << fmt::format("{:<12} {:>5} {:<14} {:>4} {:>12.6f}\n", to_string(e.site.branch), e.site.layer,
                       to_string(e.site.position), e.bottleneck, e.alpha);
  for (const AlphaRatio& r : report.ratios)
    out << fmt::format("{} layer {}: mlp/attn = {:.4f}\n", to_string(r.branch), r.layer, r.ratio);
  out << fmt::format("{} rows, {} above {}, {} below, mean |alpha - init| {:.6f}\n", report.rows.size(), report.above,
                     kAlphaInit, report.below, report.mean_abs_deviation);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Telescopic adapter fine-tuning for text-prompted segmentation"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Run config JSON");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Override the seed list with one seed");
    sub->add_option("--max-epochs", o.max_epochs, "Epoch cap");
  };
  auto plan_flags = [&](CLI::App* sub) {
    sub->add_option("--strategy", o.strategy, "telescopic|uniform|alternate|lora");
    sub->add_option("--peft-config", o.peft_config, "vision_only|vision_text|full");
    sub->add_option("--d-base", o.d_base, "Base adapter width");
    sub->add_option("--lora-rank", o.lora_rank, "LoRA rank");
  };
  auto checkpoint_flag = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoint, "Checkpoint directory (defaults to the config's)");
  };

  CLI::App* gen = app.add_subcommand("generate-data", "Write base and shifted synthetic datasets");
  common(gen);
  CLI::App* plan = app.add_subcommand("plan", "Print a placement plan and its parameter budget");
  common(plan);
  plan_flags(plan);
  plan->add_option("--geometry", o.geometry, "toy|paper")->check(CLI::IsMember({"toy", "paper"}));
  CLI::App* pre = app.add_subcommand("pretrain", "Train the full backbone on the base domain");
  common(pre);
  CLI::App* fine = app.add_subcommand("finetune", "Fine-tune a plan on the shifted domain");
  common(fine);
  plan_flags(fine);
  checkpoint_flag(fine);
  fine->add_flag("--alpha-zero", o.alpha_zero, "Debug: zero every alpha and skip training");
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  common(eval);
  checkpoint_flag(eval);
  eval->add_option("--data", o.data, "Dataset directory");
  eval->add_option("--split", o.split, "train|val|test");
  CLI::App* cmp = app.add_subcommand("compare", "Compare strategies on the shifted domain");
  common(cmp);
  plan_flags(cmp);
  checkpoint_flag(cmp);
  cmp->add_option("--jobs", o.jobs, "Cells run in parallel")->check(CLI::PositiveNumber);
  CLI::App* sweep = app.add_subcommand("sweep-loss", "Grid over the loss coefficients");
  common(sweep);
  plan_flags(sweep);
  checkpoint_flag(sweep);
  sweep->add_option("--jobs", o.jobs, "Cells run in parallel")->check(CLI::PositiveNumber);
  CLI::App* alpha = app.add_subcommand("report-alpha", "Report learned alpha scaling factors");
  common(alpha);
  checkpoint_flag(alpha);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_generate_data(o, out);
    if (plan->parsed()) return cmd_plan(o, out);
    if (pre->parsed()) return cmd_pretrain(o, out);
    if (fine->parsed()) return cmd_finetune(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (cmp->parsed()) return cmd_compare(o, out, err);
    if (sweep->parsed()) return cmd_sweep_loss(o, out, err);
    if (alpha->parsed()) return cmd_report_alpha(o, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CorruptionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitPartial;
  }
  return kExitUsage;
}

}  // namespace telescopic::cli
