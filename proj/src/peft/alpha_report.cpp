#include "telescopic/peft/alpha_report.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "telescopic/core/errors.hpp"

namespace telescopic {

namespace {

// Shortest text that parses back to the same double.
std::string exact(Real v) { return fmt::format("{}", static_cast<double>(v)); }

}  // namespace

AlphaReport alpha_report(const PeftModel& peft) {
  if (!peft.has_alpha())
    throw ConfigError("plan has no alpha scaling factors (LoRA adapts weights directly); nothing to report");
  AlphaReport r;
  r.rows = peft.alphas();
  std::map<std::pair<Branch, std::size_t>, std::pair<const AlphaEntry*, const AlphaEntry*>> layers;
  Real dev = 0;
  for (const AlphaEntry& e : r.rows) {
    if (!std::isfinite(e.alpha)) throw NumericError("alpha at " + to_string(e.site.position) + " is not finite");
    if (e.alpha > kAlphaInit) ++r.above;
    if (e.alpha < kAlphaInit) ++r.below;
    dev += std::abs(e.alpha - kAlphaInit);
    if (e.site.position == SitePosition::kPostAttention) layers[{e.site.branch, e.site.layer}].first = &e;
    if (e.site.position == SitePosition::kPostMlp) layers[{e.site.branch, e.site.layer}].second = &e;
  }
  r.mean_abs_deviation = r.rows.empty() ? Real(0) : dev / Real(r.rows.size());
  for (const auto& [key, pair] : layers) {
    if (!pair.first || !pair.second) continue;
    r.ratios.push_back({key.first, key.second, pair.first->alpha, pair.second->alpha,
                        pair.second->alpha / pair.first->alpha});
  }
  return r;
}

std::string alpha_csv(const AlphaReport& report) {
  std::string out = "branch,layer,position,adapter_dim,alpha\n";
  for (const AlphaEntry& e : report.rows)
    out += fmt::format("{},{},{},{},{}\n", to_string(e.site.branch), e.site.layer, to_string(e.site.position),
                       e.bottleneck, exact(e.alpha));
  return out;
}

std::string alpha_ratio_csv(const AlphaReport& report) {
  std::string out = "branch,layer,alpha_attn,alpha_mlp,ratio\n";
  for (const AlphaRatio& r : report.ratios)
    out += fmt::format("{},{},{},{},{}\n", to_string(r.branch), r.layer, exact(r.alpha_attn), exact(r.alpha_mlp),
                       exact(r.ratio));
  return out;
}

nlohmann::json alpha_summary(const AlphaReport& report) {
  return {{"rows", report.rows.size()},
          {"init", kAlphaInit},
          {"above_init", report.above},
          {"below_init", report.below},
          {"at_init", report.rows.size() - report.above - report.below},
          {"mean_abs_deviation", report.mean_abs_deviation}};
}

std::vector<AlphaEntry> parse_alpha_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "branch,layer,position,adapter_dim,alpha")
    throw InputError("alpha CSV: unexpected header '" + line + "'");
  std::vector<AlphaEntry> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cols.push_back(c);
    if (cols.size() != 5) throw InputError("alpha CSV: malformed row '" + line + "'");
    AlphaEntry e;
    try {
      e.site.branch = parse_branch(cols[0]);
      e.site.layer = std::stoul(cols[1]);
      e.site.position = parse_site_position(cols[2]);
      e.bottleneck = std::stoul(cols[3]);
      e.alpha = static_cast<Real>(std::stod(cols[4]));
    } catch (const std::logic_error&) {
      throw InputError("alpha CSV: malformed row '" + line + "'");
    }
    e.site.d_adapter = e.bottleneck;
    out.push_back(e);
  }
  return out;
}

}  // namespace telescopic
