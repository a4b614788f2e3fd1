#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "telescopic/core/serialize.hpp"
#include "telescopic/data/synthdata.hpp"
#include "telescopic/model/model_spec.hpp"
#include "telescopic/train/trainer.hpp"
#include "test_util.hpp"

namespace telescopic {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "telescopic-cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json tiny_config() {
  ModelSpec m;
  m.image_size = 16;
  m.vision_layers = 3;
  m.vision_dim = 32;
  m.text_layers = 3;
  m.text_dim = 32;
  m.cond_dim = 32;
  m.extract_layers = {1, 2, 3};
  SceneSpec s;
  s.image_size = 16;
  s.min_size = 2.5;
  s.max_size = 4;
  s.max_shapes = 2;
  return {{"model", to_json(m)},
          {"scene", to_json(s)},
          {"base_samples", 40},
          {"shift_samples", 40},
          {"base_data", "data/base"},
          {"shift_data", "data/shifted"},
          {"checkpoint", "pre/seed_11/checkpoint"},
          {"pretrain", {{"max_epochs", 2}, {"batch_size", 8}, {"seeds", {11}}}},
          {"finetune", {{"max_epochs", 2}, {"batch_size", 8}, {"seeds", {3}}}},
          {"sweep_grid", {{1, 1}}}};
}

// Data and a pretrained checkpoint shared by the pipeline tests.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::temp_dir("cli");
    io::write_json_file(dir_ / "config.json", tiny_config());
    ASSERT_EQ(cli({"generate-data", "--config", config(), "--out", (dir_ / "data").string()}).code, 0);
    const CliRun r = cli({"pretrain", "--config", config(), "--out", (dir_ / "pre").string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static std::string config() { return (dir_ / "config.json").string(); }
  static std::string at(const std::string& sub) { return (dir_ / sub).string(); }
  static fs::path dir_;
};

fs::path Pipeline::dir_;

TEST(Cli, PlanOnPaperGeometryReportsDelta) {
  const CliRun r = cli({"plan", "--geometry", "paper"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("TOTAL 631138"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("WARN total 631138 vs reference 613000"), std::string::npos);
}

TEST(Cli, PlanWritesBudgetCsv) {
  const auto dir = testing::temp_dir("cli_plan");
  const CliRun r = cli({"plan", "--peft-config", "vision_only", "--out", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir / "budget.csv");
  EXPECT_EQ(csv.rfind("branch,", 0), 0u) << csv;
  const auto meta = io::read_json_file(dir / "run_meta.json");
  EXPECT_EQ(meta.at("command"), "plan");
  EXPECT_EQ(meta.at("artifact_version"), cli::kArtifactVersion);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"plan", "--geometry", "huge"}).code, 2);
  EXPECT_EQ(cli({"plan", "--peft-config", "everything"}).code, 2);
  EXPECT_EQ(cli({"plan", "--d-base", "0"}).code, 2);
  EXPECT_EQ(cli({"plan", "--config", "/nonexistent/config.json"}).code, 2);

  const auto dir = testing::temp_dir("cli_bad_config");
  nlohmann::json j = tiny_config();
  j["learning_rate"] = 0.1;
  io::write_json_file(dir / "config.json", j);
  const CliRun r = cli({"plan", "--config", (dir / "config.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;
}

TEST(Cli, SweepRejectsAllZeroCellBeforeWork) {
  const auto dir = testing::temp_dir("cli_sweep_zero");
  nlohmann::json j = tiny_config();
  j["sweep_grid"] = {{1, 1}, {0, 0}};
  io::write_json_file(dir / "config.json", j);
  const CliRun r = cli({"sweep-loss", "--config", (dir / "config.json").string(), "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "out" / "sweep.csv"));
}

TEST_F(Pipeline, PretrainWritesPerSeedArtifacts) {
  EXPECT_TRUE(fs::exists(dir_ / "pre" / "seed_11" / "checkpoint" / "manifest.json"));
  const RunHistory h = RunHistory::from_csv(slurp(dir_ / "pre" / "seed_11" / "history.csv"));
  EXPECT_EQ(h.epochs.size(), 2u);
  const auto summary = io::read_json_file(dir_ / "pre" / "summary.json");
  EXPECT_TRUE(summary.at("mean").contains("dice"));
}

TEST_F(Pipeline, MaxEpochsCapsHistory) {
  const CliRun r = cli({"finetune", "--config", config(), "--out", at("ft_cap"), "--max-epochs", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  const RunHistory h = RunHistory::from_csv(slurp(dir_ / "ft_cap" / "seed_3" / "history.csv"));
  EXPECT_EQ(h.epochs.size(), 1u);
}

TEST_F(Pipeline, RerunIsByteIdentical) {
  for (const char* out : {"ft_a", "ft_b"}) {
    const CliRun r = cli({"finetune", "--config", config(), "--out", at(out)});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"summary.json", "plan.json", "run_meta.json", "seed_3/history.csv",
                        "seed_3/test_per_sample.csv", "seed_3/metrics.json"})
    EXPECT_EQ(slurp(dir_ / "ft_a" / f), slurp(dir_ / "ft_b" / f)) << f;
  EXPECT_FALSE(slurp(dir_ / "ft_a" / "seed_3" / "history.csv").empty());
}

TEST_F(Pipeline, AlphaZeroMatchesZeroShot) {
  // Main plans have no multiplicative decoder mask, so alpha = 0 removes
  // every adapter contribution.
  const CliRun r = cli({"finetune", "--config", config(), "--out", at("ft_zero"), "--alpha-zero"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = io::read_json_file(dir_ / "ft_zero" / "summary.json");
  EXPECT_EQ(s.at("mean").at("dice").get<double>(), s.at("zero_shot").at("dice").get<double>());
  EXPECT_EQ(s.at("mean").at("iou").get<double>(), s.at("zero_shot").at("iou").get<double>());
}

TEST_F(Pipeline, EvalAndAlphaReport) {
  const CliRun ft = cli({"finetune", "--config", config(), "--out", at("ft_eval")});
  ASSERT_EQ(ft.code, 0) << ft.err;
  const std::string ckpt = at("ft_eval/seed_3/checkpoint");

  const CliRun ev = cli({"eval", "--config", config(), "--checkpoint", ckpt, "--data", at("data/shifted"), "--split",
                      "test", "--out", at("eval")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  // Evaluating the saved checkpoint reproduces the fine-tune test metrics.
  EXPECT_EQ(io::read_json_file(dir_ / "eval" / "metrics.json"),
            io::read_json_file(dir_ / "ft_eval" / "seed_3" / "metrics.json"));

  const CliRun rep = cli({"report-alpha", "--config", config(), "--checkpoint", ckpt, "--out", at("alpha")});
  ASSERT_EQ(rep.code, 0) << rep.err;
  const auto summary = io::read_json_file(dir_ / "alpha" / "alpha_summary.json");
  const std::size_t rows = summary.at("rows");
  EXPECT_EQ(summary.at("above_init").get<std::size_t>() + summary.at("below_init").get<std::size_t>() +
                summary.at("at_init").get<std::size_t>(),
            rows);
  std::istringstream csv(slurp(dir_ / "alpha" / "alpha.csv"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, rows + 1);
}

TEST_F(Pipeline, ReportAlphaOnLoraCheckpointIsUsageError) {
  const CliRun ft = cli({"finetune", "--config", config(), "--out", at("ft_lora"), "--strategy", "lora",
                      "--max-epochs", "1"});
  ASSERT_EQ(ft.code, 0) << ft.err;
  const CliRun rep = cli({"report-alpha", "--config", config(), "--checkpoint", at("ft_lora/seed_3/checkpoint"),
                       "--out", at("alpha_lora")});
  EXPECT_EQ(rep.code, 2);
  EXPECT_NE(rep.err.find("alpha"), std::string::npos) << rep.err;
}

TEST_F(Pipeline, EmptySplitAndMissingInputsExitTwo) {
  const auto dir = testing::temp_dir("cli_empty_split");
  Dataset d = load_dataset(dir_ / "data" / "shifted");
  for (auto& s : d.samples) s.split = Split::kTrain;
  write_dataset(dir / "train_only", d);
  EXPECT_EQ(cli({"eval", "--config", config(), "--data", (dir / "train_only").string(), "--out",
                 (dir / "out").string()})
                .code,
            2);
  EXPECT_EQ(cli({"eval", "--config", config(), "--data", (dir / "nothing").string(), "--out",
                 (dir / "out").string()})
                .code,
            2);
  EXPECT_EQ(cli({"finetune", "--config", config(), "--checkpoint", (dir / "nothing").string(), "--out",
                 (dir / "out").string()})
                .code,
            2);
}

}  // namespace
}  // namespace telescopic
