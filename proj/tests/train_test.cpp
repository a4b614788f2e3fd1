#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "telescopic/core/errors.hpp"
#include "telescopic/core/gradcheck.hpp"
#include "telescopic/peft/budget.hpp"
#include "telescopic/train/loss.hpp"
#include "telescopic/train/metrics.hpp"
#include "telescopic/train/optim.hpp"
#include "telescopic/train/protocol.hpp"
#include "telescopic/train/trainer.hpp"
#include "grad_suite.hpp"
#include "test_util.hpp"

namespace telescopic {
namespace {

using testing::kGradSeeds;
using testing::kGradTol;
using testing::random_tensor;

using testing::random_mask;

// ---- loss ----

TEST(Loss, ZeroLogitsHalfMaskClosedForm) {
  Tensor logits = Tensor::zeros({1, 1, 4, 4});
  Tensor mask({1, 1, 4, 4});
  for (std::size_t i = 0; i < 8; ++i) mask.mutable_data()[i] = 1;
  LossParts parts;
  const Tensor total = composite_loss(logits, mask, 1.5, 1.0, 0.0, &parts);
  EXPECT_NEAR(parts.dice, 0.5, 1e-6);
  EXPECT_NEAR(parts.bce, std::log(2.0), 1e-6);
  EXPECT_NEAR(total.item(), 1.4431, 1e-4);
  EXPECT_NEAR(total.item(), 0.75 + std::log(2.0), 1e-12);
}

TEST(Loss, PerfectPredictionIsNearZero) {
  RngStream rng(1);
  Tensor mask = random_mask({2, 1, 8, 8}, rng);
  Tensor logits(mask.shape());
  for (std::size_t i = 0; i < mask.numel(); ++i) logits.mutable_data()[i] = mask[i] > 0 ? 1000 : -1000;
  EXPECT_LT(composite_loss(logits, mask, 1.5, 1.0, 1.0).item(), 1e-6);
}

TEST(Loss, WeightsDecomposeLinearly) {
  for (int seed = 0; seed < 50; ++seed) {
    RngStream rng(100 + seed);
    Tensor logits = random_tensor({3, 1, 8, 8}, rng, -4, 4);
    Tensor mask = random_mask(logits.shape(), rng);
    const Real ld = static_cast<Real>(rng.uniform(0, 3)), lb = static_cast<Real>(rng.uniform(0, 3));
    const Real eps = seed % 2 ? Real(1) : Real(0);
    const Real a = composite_loss(logits, mask, ld, 0, eps).item();
    const Real b = composite_loss(logits, mask, 0, lb, eps).item();
    const Real both = composite_loss(logits, mask, ld, lb, eps).item();
    EXPECT_NEAR(a + b, both, 1e-12);
  }
}

TEST(Loss, ComponentArithmetic) {
  RngStream rng(3);
  Tensor logits = random_tensor({2, 1, 8, 8}, rng, -3, 3);
  Tensor mask = random_mask(logits.shape(), rng);
  LossParts p;
  const Real total = composite_loss(logits, mask, 1.5, 1.0, 1.0, &p).item();
  EXPECT_NEAR(total, 1.5 * p.dice + 1.0 * p.bce, 1e-12);
}

TEST(Loss, RejectsBadInputs) {
  Tensor logits = Tensor::zeros({1, 1, 2, 2});
  Tensor mask({1, 1, 2, 2}, std::vector<Real>{0, 1, 0.5, 1});
  EXPECT_THROW(composite_loss(logits, mask, 1, 1, 1), InputError);
  EXPECT_THROW(composite_loss(logits, Tensor::zeros({1, 1, 2, 2}), -1, 1, 1), ParameterError);
  EXPECT_THROW(composite_loss(logits, Tensor::zeros({1, 1, 2, 3}), 1, 1, 1), DimensionError);
}

TEST(Loss, GradientsMatchFiniteDifferences) {
  for (int seed = 0; seed < kGradSeeds; ++seed)
    for (Real eps : {Real(0), Real(1)})
      EXPECT_LT(testing::loss_grad_error(seed, eps), kGradTol) << "seed " << seed << " eps " << eps;
}

TEST(Loss, PureBceGradientHasNoDiceTerm) {
  RngStream rng(5);
  Tensor logits = random_tensor({2, 1, 4, 4}, rng, -3, 3, true);
  Tensor mask = random_mask(logits.shape(), rng);
  backward(composite_loss(logits, mask, 0, 1, 1));
  const double n = double(logits.numel());
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const double p = 1.0 / (1.0 + std::exp(-double(logits[i])));
    EXPECT_NEAR(logits.grad()[i], (p - mask[i]) / n, 1e-15);
  }
}

// ---- metrics ----

TEST(Metrics, ReferenceCases) {
  const std::vector<Real> a{1, 1, 1, 1, 0, 0, 0, 0}, b{0, 0, 1, 1, 1, 1, 0, 0}, none(8, 0), far{0, 0, 0, 0, 1, 1, 1, 1};
  EXPECT_EQ(dice_score(a, a), 100.0);
  EXPECT_EQ(iou_score(a, a), 100.0);
  EXPECT_EQ(dice_score(a, far), 0.0);
  EXPECT_EQ(iou_score(a, far), 0.0);
  EXPECT_NEAR(dice_score(a, b), 50.0, 1e-12);
  EXPECT_NEAR(iou_score(a, b), 100.0 / 3.0, 1e-12);
  EXPECT_EQ(dice_score(none, none), 100.0);
  EXPECT_EQ(iou_score(none, none), 100.0);
  EXPECT_THROW(mask_scores(a, std::vector<Real>(3, 0)), DimensionError);
}

TEST(Metrics, IouNeverExceedsDice) {
  RngStream rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Real> p(20), t(20);
    for (auto& v : p) v = rng.below(2);
    for (auto& v : t) v = rng.below(2);
    const MaskScores s = mask_scores(p, t);
    EXPECT_LE(s.iou, s.dice + 1e-12);
    if (p == t || s.dice == 0) EXPECT_NEAR(s.iou, s.dice, 1e-12);
    else EXPECT_LT(s.iou, s.dice);
  }
}

TEST(Metrics, ThresholdAtZeroLogit) {
  const std::vector<Real> l{-1e-9, 0, 2};
  EXPECT_EQ(threshold_logits(l), (std::vector<Real>{0, 1, 1}));
}

// ---- optimizer ----

TEST(AdamW, PureDecayStep) {
  Tensor w({1}, std::vector<Real>{1});
  w.set_requires_grad(true);
  AdamW opt({w}, {0.1, 0.1});
  w.mutable_grad()[0] = 0;
  opt.step();
  EXPECT_NEAR(w[0], 0.99, 1e-15);
}

TEST(AdamW, FirstStepIsLearningRateTimesSign) {
  for (Real g : {Real(3), Real(-0.02)}) {
    Tensor w({1}, std::vector<Real>{0.5});
    w.set_requires_grad(true);
    AdamW opt({w}, {0.01, 0.0});
    w.mutable_grad()[0] = g;
    opt.step();
    EXPECT_NEAR(w[0], 0.5 - 0.01 * (g > 0 ? 1 : -1), 1e-6);
  }
}

TEST(AdamW, ConvergesOnQuadraticBowl) {
  Tensor w({3}, std::vector<Real>{4, -2, 1});
  w.set_requires_grad(true);
  const std::vector<Real> target{1, 2, -3};
  AdamW opt({w}, {0.05, 0.0});
  for (int step = 0; step < 1500; ++step) {
    for (std::size_t i = 0; i < 3; ++i) w.mutable_grad()[i] = 2 * (w[i] - target[i]);
    opt.step();
    // Shrink the step as the optimum nears so the iterate settles.
    if (step == 250) opt.set_lr(0.005);
    if (step == 600) opt.set_lr(0.0005);
    if (step == 1000) opt.set_lr(0.00005);
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w[i], target[i], 1e-4);
}

TEST(AdamW, TouchesOnlyItsOwnTensors) {
  Tensor owned({2}, std::vector<Real>{1, 1}), other({2}, std::vector<Real>{5, 5});
  owned.set_requires_grad(true);
  other.set_requires_grad(true);
  AdamW opt({owned}, {0.1, 0.1});
  other.mutable_grad()[0] = 1;
  owned.mutable_grad()[0] = 1;
  opt.step();
  EXPECT_EQ(other[0], 5);
  EXPECT_EQ(other[1], 5);
  EXPECT_NE(owned[0], 1);
  EXPECT_EQ(opt.state_size(), 2u);
}

// ---- protocol ----

TEST(Plateau, CutsAfterFiveNonImprovingEpochs) {
  PlateauScheduler s(1e-3);
  const std::vector<Real> losses{1.0, .9, .9, .9, .9, .9, .9};
  std::vector<Real> lrs;
  for (Real l : losses) lrs.push_back(s.step(l));
  for (std::size_t i = 0; i + 1 < lrs.size(); ++i) EXPECT_EQ(lrs[i], Real(1e-3));
  EXPECT_NEAR(lrs.back(), 3e-4, 1e-18);
}

TEST(Plateau, CompoundsAndIgnoresImprovement) {
  PlateauScheduler s(1e-3);
  s.step(1.0);
  for (int i = 0; i < 10; ++i) s.step(1.0);
  EXPECT_NEAR(s.lr(), 9e-5, 1e-18);
  EXPECT_EQ(s.reductions(), 2u);
  PlateauScheduler down(1e-3);
  for (int i = 0; i < 30; ++i) down.step(1.0 - 0.01 * i);
  EXPECT_EQ(down.lr(), Real(1e-3));
}

TEST(EarlyStop, StopsTwentyEpochsAfterPeak) {
  EarlyStopper s;
  std::size_t stopped = 0;
  for (std::size_t e = 1; e <= 100 && !stopped; ++e)
    if (s.step(e, e <= 5 ? double(e) : 5.0)) stopped = e;
  EXPECT_EQ(stopped, 25u);
  EXPECT_EQ(s.best_epoch(), 5u);
}

TEST(EarlyStop, ImprovementResetsWindow) {
  EarlyStopper s;
  for (std::size_t e = 1; e <= 19; ++e) EXPECT_FALSE(s.step(e, 1.0 - (e > 1)));
  EXPECT_FALSE(s.step(20, 2.0));
  for (std::size_t e = 21; e < 40; ++e) EXPECT_FALSE(s.step(e, 1.0));
  EXPECT_TRUE(s.step(40, 1.0));
  EarlyStopper up;
  for (std::size_t e = 1; e <= 200; ++e) EXPECT_FALSE(up.step(e, double(e)));
}

TEST(Protocol, ReplayReproducesDecisions) {
  RngStream rng(9);
  std::vector<Real> losses;
  for (int i = 0; i < 60; ++i) losses.push_back(static_cast<Real>(rng.uniform(0, 1)));
  PlateauScheduler a(1e-3), b(1e-3);
  for (Real l : losses) EXPECT_EQ(a.step(l), b.step(l));
}

// ---- config and history ----

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.lambda_dice = 0.5;
  c.seeds = {1, 2};
  EXPECT_EQ(train_config_from_json(to_json(c)), c);
  EXPECT_THROW(train_config_from_json({{"lamda_dice", 1}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"scheduler_factor", 1.0}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"early_stop_patience", 0}}), ConfigError);
  EXPECT_THROW(train_config_from_json({{"lambda_bce", -1}}), ConfigError);
}

TEST(RunHistory, CsvRoundTrip) {
  RunHistory h;
  h.epochs.push_back({1, 0.5, 0.25, 80.125, 70.5, 1e-3});
  h.epochs.push_back({2, 0.1 + 0.2, 0.2, 81.0, 71.0, 3e-4});
  const RunHistory back = RunHistory::from_csv(h.to_csv());
  ASSERT_EQ(back.epochs.size(), 2u);
  EXPECT_EQ(back.epochs[1].train_loss, h.epochs[1].train_loss);
  EXPECT_EQ(back.epochs[1].lr, h.epochs[1].lr);
  EXPECT_EQ(back.to_csv(), h.to_csv());
}

// ---- loops ----

struct Fixture {
  ModelSpec spec;
  Dataset data;
  TrainConfig cfg;
};

Fixture tiny() {
  Fixture f;
  f.spec.image_size = 16;
  f.spec.vision_layers = 3;
  f.spec.vision_dim = 32;
  f.spec.text_layers = 3;
  f.spec.text_dim = 32;
  f.spec.cond_dim = 32;
  f.spec.extract_layers = {1, 2, 3};
  SceneSpec scene;
  scene.image_size = 16;
  scene.min_size = 2.5;
  scene.max_size = 4;
  scene.max_shapes = 2;
  f.data = generate_samples(scene, {}, 40, 3);
  f.cfg.batch_size = 8;
  f.cfg.max_epochs = 2;
  return f;
}

TEST(Trainer, SameSeedGivesIdenticalHistory) {
  Fixture f = tiny();
  Backbone a(f.spec, 1), b(f.spec, 1);
  const RunHistory ha = train_model(a, nullptr, f.data, f.cfg, 5, TrainMode::kPretrain).history;
  const RunHistory hb = train_model(b, nullptr, f.data, f.cfg, 5, TrainMode::kPretrain).history;
  EXPECT_EQ(ha.to_csv(), hb.to_csv());
  EXPECT_EQ(ha.epochs.size(), 2u);
  const auto sa = a.params().snapshot(), sb = b.params().snapshot();
  for (std::size_t i = 0; i < sa.size(); ++i)
    for (std::size_t k = 0; k < sa[i].tensor.numel(); ++k) ASSERT_EQ(sa[i].tensor[k], sb[i].tensor[k]);
}

TEST(Trainer, FinetuneLeavesBackboneUntouched) {
  Fixture f = tiny();
  Backbone model(f.spec, 1);
  const auto before = model.params().snapshot();
  const PlacementPlan plan = build_main_plan(f.spec, PlanConfig::kFull);
  PeftModel peft(plan, f.spec, 2);
  f.cfg.max_steps = 7;
  f.cfg.max_epochs = 10;
  const TrainResult r = train_model(model, &peft, f.data, f.cfg, 5, TrainMode::kFinetune);
  EXPECT_EQ(r.steps, 7u);
  EXPECT_EQ(r.optimizer_scalars, count_trainable(plan, f.spec).total);
  const auto refine = model.refine_param_names();
  const auto after = model.params().snapshot();
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (std::find(refine.begin(), refine.end(), before[i].name) != refine.end()) continue;
    for (std::size_t k = 0; k < before[i].tensor.numel(); ++k)
      ASSERT_EQ(before[i].tensor[k], after[i].tensor[k]) << before[i].name;
  }
}

TEST(Trainer, EvaluateRejectsEmptySplit) {
  Fixture f = tiny();
  Dataset only_train = f.data;
  for (auto& s : only_train.samples) s.split = Split::kTrain;
  Backbone model(f.spec, 1);
  EXPECT_THROW(evaluate(model, nullptr, only_train, Split::kTest, f.cfg), UsageError);
}

TEST(Trainer, EvaluateAveragesPerSample) {
  Fixture f = tiny();
  Backbone model(f.spec, 1);
  const EvalResult r = evaluate(model, nullptr, f.data, Split::kTest, f.cfg);
  ASSERT_EQ(r.per_sample.size(), f.data.indices(Split::kTest).size());
  double d = 0;
  for (const auto& s : r.per_sample) d += s.dice;
  EXPECT_NEAR(r.dice, d / double(r.per_sample.size()), 1e-12);
}

TEST(Trainer, NonFiniteLossNamesTheBatch) {
  Fixture f = tiny();
  Backbone model(f.spec, 1);
  Tensor w = model.params().at("vision.patch_embed.w");
  // Huge finite weights get normalized away by layer norm, so poison one entry.
  w.mutable_data()[3] = std::numeric_limits<Real>::quiet_NaN();
  try {
    train_model(model, nullptr, f.data, f.cfg, 5, TrainMode::kPretrain);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("epoch 1 batch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("|w|="), std::string::npos);
  }
}

}  // namespace
}  // namespace telescopic
