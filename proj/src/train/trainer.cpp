#include "telescopic/train/trainer.hpp"

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "telescopic/core/errors.hpp"
#include "telescopic/train/loss.hpp"
#include "telescopic/train/metrics.hpp"
#include "telescopic/train/optim.hpp"
#include "telescopic/train/protocol.hpp"

namespace telescopic {

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid train config: " + what); };
  if (!(lambda_dice >= 0) || !(lambda_bce >= 0)) fail("loss weights must be non-negative");
  if (lambda_dice == 0 && lambda_bce == 0) fail("at least one loss weight must be positive");
  if (!(lr > 0)) fail("lr must be positive");
  if (!(weight_decay >= 0)) fail("weight_decay must be non-negative");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(scheduler_factor > 0 && scheduler_factor < 1)) fail("scheduler_factor must lie in (0, 1)");
  if (scheduler_patience == 0 || early_stop_patience == 0) fail("patiences must be at least 1");
  if (max_epochs == 0) fail("max_epochs must be positive");
  if (seeds.empty()) fail("seeds must not be empty");
  if (!(dice_eps >= 0)) fail("dice_eps must be non-negative");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"lambda_dice", c.lambda_dice},
          {"lambda_bce", c.lambda_bce},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"scheduler_factor", c.scheduler_factor},
          {"scheduler_patience", c.scheduler_patience},
          {"early_stop_patience", c.early_stop_patience},
          {"max_epochs", c.max_epochs},
          {"max_steps", c.max_steps},
          {"seeds", c.seeds},
          {"dice_eps", c.dice_eps}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  const nlohmann::json defaults = to_json(c);
  for (const auto& [key, _] : j.items())
    if (!defaults.contains(key)) throw ConfigError("unknown train config key '" + key + "'");
  auto real = [&](const char* key, Real& field) {
    if (j.contains(key)) field = j.at(key).get<Real>();
  };
  auto count = [&](const char* key, std::size_t& field) {
    if (j.contains(key)) field = j.at(key).get<std::size_t>();
  };
  real("lambda_dice", c.lambda_dice);
  real("lambda_bce", c.lambda_bce);
  real("lr", c.lr);
  real("weight_decay", c.weight_decay);
  count("batch_size", c.batch_size);
  real("scheduler_factor", c.scheduler_factor);
  count("scheduler_patience", c.scheduler_patience);
  count("early_stop_patience", c.early_stop_patience);
  count("max_epochs", c.max_epochs);
  count("max_steps", c.max_steps);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  real("dice_eps", c.dice_eps);
  c.validate();
  return c;
}

std::string RunHistory::to_csv() const {
  std::string out = "epoch,train_loss,val_loss,val_dice,val_iou,lr\n";
  for (const auto& e : epochs)
    out += fmt::format("{},{},{},{},{},{}\n", e.epoch, static_cast<double>(e.train_loss),
                       static_cast<double>(e.val_loss), e.val_dice, e.val_iou, static_cast<double>(e.lr));
  return out;
}

RunHistory RunHistory::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,train_loss,val_loss,val_dice,val_iou,lr")
    throw InputError("history CSV: unexpected header '" + line + "'");
  RunHistory h;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cols.push_back(c);
    if (cols.size() != 6) throw InputError("history CSV: malformed row '" + line + "'");
    EpochRecord e;
    try {
      e.epoch = std::stoul(cols[0]);
      e.train_loss = static_cast<Real>(std::stod(cols[1]));
      e.val_loss = static_cast<Real>(std::stod(cols[2]));
      e.val_dice = std::stod(cols[3]);
      e.val_iou = std::stod(cols[4]);
      e.lr = static_cast<Real>(std::stod(cols[5]));
    } catch (const std::logic_error&) {
      throw InputError("history CSV: malformed row '" + line + "'");
    }
    h.epochs.push_back(e);
  }
  return h;
}

std::string EvalResult::per_sample_csv() const {
  std::string out = "index,dice,iou\n";
  for (const auto& s : per_sample) out += fmt::format("{},{},{}\n", s.index, s.dice, s.iou);
  return out;
}

nlohmann::json EvalResult::to_json() const {
  return {{"dice", dice}, {"iou", iou}, {"loss", static_cast<double>(loss)}, {"samples", per_sample.size()}};
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("make_batch: no samples");
  const Tensor& first = data.samples.at(indices[0]).image;
  const std::size_t h = first.dim(first.rank() - 2), w = first.dim(first.rank() - 1), px = h * w;
  Batch b;
  b.images = Tensor({indices.size(), 1, h, w});
  b.masks = Tensor({indices.size(), 1, h, w});
  b.tokens.batch = indices.size();
  b.tokens.length = data.samples.at(indices[0]).tokens.size();
  auto img = b.images.mutable_data();
  auto msk = b.masks.mutable_data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Sample& s = data.samples.at(indices[i]);
    if (s.image.numel() != px || s.mask.numel() != px || s.tokens.size() != b.tokens.length)
      throw DimensionError("make_batch: sample " + std::to_string(indices[i]) + " differs in shape");
    std::copy(s.image.data().begin(), s.image.data().end(), img.begin() + i * px);
    std::copy(s.mask.data().begin(), s.mask.data().end(), msk.begin() + i * px);
    b.tokens.ids.insert(b.tokens.ids.end(), s.tokens.begin(), s.tokens.end());
  }
  return b;
}

namespace {

// Turns gradient tracking off for the lifetime of the guard.
class NoGrad {
 public:
  explicit NoGrad(std::initializer_list<const ParamSet*> sets) {
    for (const ParamSet* set : sets) {
      if (!set) continue;
      for (const auto& e : set->entries())
        if (e.tensor.requires_grad()) {
          Tensor t = e.tensor;
          t.set_requires_grad(false);
          tracked_.push_back(t);
        }
    }
  }
  ~NoGrad() {
    for (auto& t : tracked_) t.set_requires_grad(true);
  }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;

 private:
  std::vector<Tensor> tracked_;
};

std::string norm_snapshot(const ParamSet& params) {
  std::string out;
  for (const auto& e : params.entries()) {
    if (!e.tensor.requires_grad()) continue;
    double sq = 0;
    for (Real v : e.tensor.data()) sq += double(v) * double(v);
    out += fmt::format("\n  {} |w|={:.6g}", e.name, std::sqrt(sq));
  }
  return out;
}

void restore(ParamSet& params, const std::vector<io::NamedTensor>& snap) { params.load_values(snap, "best epoch"); }

}  // namespace

EvalResult evaluate(const Backbone& model, PeftModel* peft, const Dataset& data, Split split,
                    const TrainConfig& config) {
  const std::vector<std::size_t> idx = data.indices(split);
  if (idx.empty()) throw UsageError("evaluation split '" + to_string(split) + "' is empty");
  NoGrad guard({&model.params(), peft ? &peft->params() : nullptr});
  EvalResult r;
  double loss_sum = 0;
  const RunMode mode{false, RngStream(0)};
  for (std::size_t start = 0; start < idx.size(); start += config.batch_size) {
    const std::size_t n = std::min(config.batch_size, idx.size() - start);
    const std::span<const std::size_t> part(idx.data() + start, n);
    Batch b = make_batch(data, part);
    Tensor logits = model.forward(b.images, b.tokens, peft, mode);
    Tensor loss = composite_loss(logits, b.masks, config.lambda_dice, config.lambda_bce, config.dice_eps);
    loss_sum += double(loss.item()) * double(n);
    const std::size_t px = logits.numel() / n;
    const std::vector<Real> pred = threshold_logits(logits.data());
    for (std::size_t i = 0; i < n; ++i) {
      const MaskScores s = mask_scores(std::span<const Real>(pred).subspan(i * px, px),
                                       b.masks.data().subspan(i * px, px));
      r.per_sample.push_back({part[i], s.dice, s.iou});
    }
  }
  for (const auto& s : r.per_sample) {
    r.dice += s.dice;
    r.iou += s.iou;
  }
  r.dice /= double(r.per_sample.size());
  r.iou /= double(r.per_sample.size());
  r.loss = static_cast<Real>(loss_sum / double(idx.size()));
  return r;
}

TrainResult train_model(Backbone& model, PeftModel* peft, const Dataset& data, const TrainConfig& config,
                        std::uint64_t seed, TrainMode mode) {
  config.validate();
  if (mode == TrainMode::kPretrain && peft) throw UsageError("pretraining takes no PEFT plan");
  if (mode == TrainMode::kFinetune && !peft) throw UsageError("fine-tuning needs a PEFT plan");
  std::vector<std::size_t> train_idx = data.indices(Split::kTrain);
  if (train_idx.empty()) throw UsageError("training split is empty");
  if (data.indices(Split::kVal).empty()) throw UsageError("validation split is empty");

  std::vector<Tensor> trainable;
  if (mode == TrainMode::kPretrain) {
    model.unfreeze_all();
  } else {
    model.freeze_backbone();
    peft->params().set_trainable(true);
    for (Tensor& t : peft->params().trainable()) trainable.push_back(t);
  }
  for (Tensor& t : model.params().trainable()) trainable.push_back(t);

  AdamW opt(trainable, {config.lr, config.weight_decay});
  PlateauScheduler scheduler(config.lr, config.scheduler_factor, config.scheduler_patience);
  EarlyStopper stopper(config.early_stop_patience);
  const RngStream root = RngStream(seed).split(mode == TrainMode::kPretrain ? "pretrain" : "finetune");

  TrainResult result;
  result.optimizer_scalars = opt.state_size();
  std::vector<io::NamedTensor> best_model = model.params().snapshot();
  std::vector<io::NamedTensor> best_peft;
  if (peft) best_peft = peft->params().snapshot();

  bool out_of_steps = false;
  for (std::size_t epoch = 1; epoch <= config.max_epochs && !out_of_steps; ++epoch) {
    RngStream shuffle = root.split("shuffle").split(epoch);
    for (std::size_t i = train_idx.size(); i > 1; --i) std::swap(train_idx[i - 1], train_idx[shuffle.below(i)]);

    double loss_sum = 0;
    std::size_t seen = 0, batch_no = 0;
    for (std::size_t start = 0; start < train_idx.size(); start += config.batch_size, ++batch_no) {
      if (config.max_steps && result.steps >= config.max_steps) {
        out_of_steps = true;
        break;
      }
      const std::size_t n = std::min(config.batch_size, train_idx.size() - start);
      Batch b = make_batch(data, std::span<const std::size_t>(train_idx.data() + start, n));
      const RunMode run{true, root.split("dropout").split(result.steps)};
      Tensor loss;
      try {
        Tensor logits = model.forward(b.images, b.tokens, peft, run);
        loss = composite_loss(logits, b.masks, config.lambda_dice, config.lambda_bce, config.dice_eps);
        backward(loss);
      } catch (const NumericError& e) {
        throw NumericError(fmt::format("non-finite value in epoch {} batch {} ({}); parameter norms:{}{}", epoch,
                                       batch_no, e.what(), norm_snapshot(model.params()),
                                       peft ? norm_snapshot(peft->params()) : std::string()));
      }
      opt.step();
      opt.zero_grad();
      ++result.steps;
      loss_sum += double(loss.item()) * double(n);
      seen += n;
    }
    if (seen == 0) break;

    const EvalResult val = evaluate(model, peft, data, Split::kVal, config);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = static_cast<Real>(loss_sum / double(seen));
    rec.val_loss = val.loss;
    rec.val_dice = val.dice;
    rec.val_iou = val.iou;
    rec.lr = opt.lr();
    result.history.epochs.push_back(rec);

    opt.set_lr(scheduler.step(val.loss));
    const bool stop = stopper.step(epoch, val.dice);
    if (stopper.improved_last()) {
      best_model = model.params().snapshot();
      if (peft) best_peft = peft->params().snapshot();
    }
    if (stop) break;
  }
  result.history.best_epoch = stopper.best_epoch();
  restore(model.params(), best_model);
  if (peft) restore(peft->params(), best_peft);
  return result;
}

}  // namespace telescopic
