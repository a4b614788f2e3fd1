#include "telescopic/peft/peft_modules.hpp"

#include "telescopic/core/errors.hpp"
#include "telescopic/core/serialize.hpp"

#include <algorithm>
#include <cmath>

namespace telescopic {

namespace {

std::string site_name(const AdapterSite& s) {
  return "peft." + to_string(s.branch) + ".layer" + std::to_string(s.layer) + "." + to_string(s.position);
}

std::string projection_param(Branch b, std::size_t layer, Projection p) {
  static const char* names[] = {"q", "k", "v", "o"};
  return std::string(b == Branch::kVision ? "vision" : "text") + ".layer" + std::to_string(layer) + ".attn." +
         names[static_cast<int>(p)] + ".w";
}

}  // namespace

PeftModel::PeftModel(PlacementPlan plan, const ModelSpec& spec, std::uint64_t seed)
    : plan_(std::move(plan)), spec_(spec) {
  plan_.validate();
  spec_.validate();
  RngStream rng = RngStream(seed).split("peft");
  for (std::size_t i = 0; i < plan_.sites.size(); ++i) {
    const AdapterSite& s = plan_.sites[i];
    const std::size_t d = site_width(spec_, s);
    if (is_lora_position(s.position)) {
      if (s.branch == Branch::kConditional || s.layer == 0 ||
          s.layer > (s.branch == Branch::kVision ? spec_.vision_layers : spec_.text_layers))
        throw ConfigError("LoRA site " + site_name(s) + " does not name an encoder attention block");
      const std::string base = "peft.lora." + to_string(s.branch) + ".layer" + std::to_string(s.layer) + "." +
                               to_string(s.position);
      LoraPair pair;
      pair.down = params_.add(base + ".A", normal_init({d, s.d_adapter}, Real(1) / std::sqrt(Real(d)), rng));
      pair.up = params_.add(base + ".B", Tensor::zeros({s.d_adapter, d}));
      lora_[{s.branch, s.layer, lora_projection(s.position)}] = pair;
      continue;
    }
    const Position pos = hook_position(s.position);
    const bool encoder_site = pos == Position::kPostAttention || pos == Position::kPostMlp;
    const std::size_t max_layer = s.branch == Branch::kVision ? spec_.vision_layers : spec_.text_layers;
    if (encoder_site && (s.branch == Branch::kConditional || s.layer == 0 || s.layer > max_layer))
      throw ConfigError("adapter site " + site_name(s) + " is outside the encoder");
    adapters_[{s.branch, s.layer, pos}] = {i, make_adapter(params_, site_name(s), d, bottleneck_width(spec_, s), rng)};
  }
  if (plan_.cross_modal)
    cross_modal_ = make_cross_modal(params_, "peft.cross_modal", spec_.vision_dim, spec_.text_dim, spec_.cond_dim,
                                    plan_.cross_modal->d_shared, plan_.cross_modal->heads, rng);
  if (plan_.decoder_enh) {
    bn_stats_ = std::make_unique<ops::BatchNormStats>();
    enhancement_ = make_decoder_enhancement(params_, "peft.decoder_enh", plan_.decoder_enh->channels, rng, *bn_stats_);
  }
}

Tensor PeftModel::site(Branch branch, std::size_t layer, Position position, const Tensor& x, const RunMode& mode) {
  auto it = adapters_.find({branch, layer, position});
  if (it == adapters_.end()) return x;
  RngStream rng = mode.rng.split(it->second.first);
  return adapter_forward(x, it->second.second, mode.training, rng);
}

Tensor PeftModel::projection_delta(Branch branch, std::size_t layer, Projection which, const Tensor& x) {
  auto it = lora_.find({branch, layer, which});
  if (it == lora_.end()) return {};
  return ops::matmul(ops::matmul(x, it->second.down), it->second.up);
}

Tensor PeftModel::cross_modal(const Tensor& cond, const Tensor& vision_pooled, const Tensor& text_pooled,
                              const RunMode&) {
  if (!cross_modal_) return cond;
  return cross_modal_enhance(*cross_modal_, cond, vision_pooled, text_pooled);
}

Tensor PeftModel::logits(const Tensor& logits, const RunMode& mode) {
  if (!enhancement_) return logits;
  return decoder_enhance(*enhancement_, logits, mode.training);
}

void PeftModel::zero_alpha() {
  for (auto& [key, entry] : adapters_) entry.second.alpha.mutable_data()[0] = Real(0);
  for (auto& [key, pair] : lora_) std::fill(pair.up.mutable_data().begin(), pair.up.mutable_data().end(), Real(0));
}

std::vector<AlphaEntry> PeftModel::alphas() const {
  std::vector<std::pair<std::size_t, AlphaEntry>> rows;
  for (const auto& [key, entry] : adapters_) {
    const AdapterSite& s = plan_.sites[entry.first];
    rows.push_back({entry.first, {s, entry.second.bottleneck(), entry.second.alpha.item()}});
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<AlphaEntry> out;
  for (auto& r : rows) out.push_back(r.second);
  return out;
}

bool PeftModel::has_alpha() const { return !adapters_.empty(); }

void PeftModel::merge_lora_into(Backbone& model) const {
  for (const auto& [key, pair] : lora_) {
    const auto& [branch, layer, which] = key;
    Tensor w = model.params().at(projection_param(branch, layer, which));
    const Tensor delta = ops::matmul(pair.down.detach(), pair.up.detach());
    auto dst = w.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += delta.data()[i];
  }
}

void PeftModel::load_values(const std::vector<io::NamedTensor>& entries, const std::string& context) {
  params_.load_values(entries, context);
}

void save_adapted(const std::filesystem::path& dir, const Backbone& model, const PeftModel& peft,
                  const nlohmann::json& extra) {
  if (!(peft.spec() == model.spec())) throw ConfigError("plan was built for a different model spec");
  std::vector<io::NamedTensor> entries = model.params().snapshot();
  for (auto& e : peft.params().snapshot()) entries.push_back(std::move(e));
  nlohmann::json manifest = extra;
  manifest["model_spec"] = to_json(model.spec());
  manifest["plan"] = to_json(peft.plan());
  io::save_tensor_dir(dir, entries, manifest);
}

AdaptedModel load_adapted(const std::filesystem::path& dir) {
  io::TensorDir loaded = io::load_tensor_dir(dir);
  if (!loaded.manifest.contains("model_spec"))
    throw CorruptionError("checkpoint " + dir.string() + " records no model_spec");
  const ModelSpec spec = model_spec_from_json(loaded.manifest.at("model_spec"));
  AdaptedModel out;
  out.model = std::make_unique<Backbone>(spec, 0);
  out.model->params().load_values(loaded.entries, dir.string());
  if (loaded.manifest.contains("plan") && !loaded.manifest.at("plan").is_null()) {
    out.peft = std::make_unique<PeftModel>(plan_from_json(loaded.manifest.at("plan")), spec, 0);
    out.peft->load_values(loaded.entries, dir.string());
  }
  return out;
}

}  // namespace telescopic
