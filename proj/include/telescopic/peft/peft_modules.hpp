#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <tuple>
#include <vector>

#include "telescopic/model/backbone.hpp"
#include "telescopic/peft/adapter.hpp"
#include "telescopic/peft/cross_modal.hpp"
#include "telescopic/peft/decoder_enhancement.hpp"
#include "telescopic/peft/plan.hpp"

namespace telescopic {

struct LoraPair {
  Tensor down;  // A: [d x r], Gaussian
  Tensor up;    // B: [r x d], zero at init
};

struct AlphaEntry {
  AdapterSite site;
  std::size_t bottleneck = 0;
  Real alpha = 0;
};

// Trainable modules of a placement plan, attached to a Backbone through the
// ModelHooks interface. Parameter names are prefixed with "peft.".
class PeftModel : public ModelHooks {
 public:
  PeftModel(PlacementPlan plan, const ModelSpec& spec, std::uint64_t seed);
  PeftModel(const PeftModel&) = delete;
  PeftModel& operator=(const PeftModel&) = delete;

  const PlacementPlan& plan() const { return plan_; }
  const ModelSpec& spec() const { return spec_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  Tensor site(Branch branch, std::size_t layer, Position position, const Tensor& x, const RunMode& mode) override;
  Tensor projection_delta(Branch branch, std::size_t layer, Projection which, const Tensor& x) override;
  Tensor cross_modal(const Tensor& cond, const Tensor& vision_pooled, const Tensor& text_pooled,
                     const RunMode& mode) override;
  Tensor logits(const Tensor& logits, const RunMode& mode) override;

  // Sets every alpha and every LoRA up-matrix to zero.
  void zero_alpha();
  std::vector<AlphaEntry> alphas() const;
  bool has_alpha() const;
  // Folds A.B into the backbone's attention weights (W + A.B).
  void merge_lora_into(Backbone& model) const;

  // Restores values from a checkpoint's entries (extra names are ignored).
  void load_values(const std::vector<io::NamedTensor>& entries, const std::string& context);

 private:
  using SiteKey = std::tuple<Branch, std::size_t, Position>;
  using LoraKey = std::tuple<Branch, std::size_t, Projection>;

  PlacementPlan plan_;
  ModelSpec spec_;
  ParamSet params_;
  std::map<SiteKey, std::pair<std::size_t, AdapterParams>> adapters_;  // site index, weights
  std::map<LoraKey, LoraPair> lora_;
  std::optional<CrossModalBlock> cross_modal_;
  std::optional<DecoderEnhancement> enhancement_;
  std::unique_ptr<ops::BatchNormStats> bn_stats_;
};

// Fine-tuned checkpoint: backbone tensors, plan tensors, the ModelSpec and
// the serialized plan in one model directory.
void save_adapted(const std::filesystem::path& dir, const Backbone& model, const PeftModel& peft,
                  const nlohmann::json& extra = nlohmann::json::object());

struct AdaptedModel {
  std::unique_ptr<Backbone> model;
  std::unique_ptr<PeftModel> peft;  // null for a plain backbone checkpoint
};

AdaptedModel load_adapted(const std::filesystem::path& dir);

}  // namespace telescopic
