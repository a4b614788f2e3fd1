#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "telescopic/data/synthdata.hpp"
#include "telescopic/model/backbone.hpp"
#include "telescopic/peft/peft_modules.hpp"

namespace telescopic {

struct TrainConfig {
  Real lambda_dice = 1.5;
  Real lambda_bce = 1.0;
  Real lr = 1e-3;
  Real weight_decay = 1e-3;
  std::size_t batch_size = 32;
  Real scheduler_factor = 0.3;
  std::size_t scheduler_patience = 5;
  std::size_t early_stop_patience = 20;
  std::size_t max_epochs = 100;
  // Stop after this many optimizer steps (0: no cap).
  std::size_t max_steps = 0;
  std::vector<std::uint64_t> seeds{11, 23, 37};
  Real dice_eps = 1.0;

  void validate() const;  // ConfigError
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
// Rejects unknown keys; absent keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochRecord {
  std::size_t epoch = 0;
  Real train_loss = 0;
  Real val_loss = 0;
  double val_dice = 0;
  double val_iou = 0;
  Real lr = 0;  // rate used during the epoch
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;

  // epoch,train_loss,val_loss,val_dice,val_iou,lr
  std::string to_csv() const;
  static RunHistory from_csv(const std::string& text);
};

struct SampleScore {
  std::size_t index = 0;  // position in the dataset
  double dice = 0;
  double iou = 0;
};

struct EvalResult {
  double dice = 0;  // mean over samples, percent
  double iou = 0;
  Real loss = 0;  // mean composite loss
  std::vector<SampleScore> per_sample;

  // index,dice,iou
  std::string per_sample_csv() const;
  nlohmann::json to_json() const;
};

struct Batch {
  Tensor images;  // [b x 1 x S x S]
  Tensor masks;
  TokenBatch tokens;
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices);

// Eval mode (no dropout, running batch-norm statistics). UsageError when the
// split is empty.
EvalResult evaluate(const Backbone& model, PeftModel* peft, const Dataset& data, Split split,
                    const TrainConfig& config);

enum class TrainMode { kPretrain, kFinetune };

struct TrainResult {
  RunHistory history;
  std::size_t steps = 0;
  // Scalars the optimizer was allowed to update.
  std::size_t optimizer_scalars = 0;
};

// Pretrain updates every backbone parameter (peft must be null). Finetune
// freezes the backbone except the refinement head and trains the plan. The
// parameters of the best validation-DSC epoch are restored at the end.
// NumericError on a non-finite loss, naming the batch and parameter norms.
TrainResult train_model(Backbone& model, PeftModel* peft, const Dataset& data, const TrainConfig& config,
                        std::uint64_t seed, TrainMode mode);

}  // namespace telescopic
