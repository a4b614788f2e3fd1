#include "telescopic/data/tokenizer.hpp"

#include <sstream>
#include <unordered_map>

#include "telescopic/core/errors.hpp"
#include "telescopic/model/model_spec.hpp"

namespace telescopic {

namespace {

const std::vector<std::string> kWords = {
    "<pad>",  "<bos>",   "<eos>",  "segment", "the",    "disk",   "square",  "triangle",
    "circle", "box",     "shape",  "a",       "an",     "of",     "in",      "on",
    "image",  "region",  "mask",   "object",  "left",   "right",  "top",     "bottom",
    "center", "small",   "large",  "bright",  "dark",   "round",  "corner",  "edge",
    "find",   "outline", "select", "show",    "mark",   "area",   "lesion",  "polyp",
    "tissue", "tumor",   "organ",  "cell",    "nodule", "skin",   "scan",    "slice",
    "upper",  "lower",   "inner",  "outer",   "one",    "two",    "three",   "and",
    "with",   "near",    "at",     "is",      "this",   "that",   "please",  "all",
};

const std::unordered_map<std::string, std::size_t>& index() {
  static const auto table = [] {
    std::unordered_map<std::string, std::size_t> t;
    for (std::size_t i = 0; i < kWords.size(); ++i) t.emplace(kWords[i], i);
    return t;
  }();
  return table;
}

static_assert(kPadToken == 0 && kBosToken == 1 && kEosToken == 2);

}  // namespace

const std::vector<std::string>& Tokenizer::vocabulary() { return kWords; }

std::size_t Tokenizer::id_of(std::string_view word) {
  auto it = index().find(std::string(word));
  if (it == index().end() || it->second <= kEosToken)
    throw InputError("word '" + std::string(word) + "' is not in the prompt vocabulary");
  return it->second;
}

std::vector<std::size_t> Tokenizer::encode(std::string_view prompt) {
  std::vector<std::size_t> ids{kBosToken};
  std::istringstream words{std::string(prompt)};
  for (std::string w; words >> w;) ids.push_back(id_of(w));
  if (ids.size() > kContextLength - 1) ids.resize(kContextLength - 1);
  ids.push_back(kEosToken);
  ids.resize(kContextLength, kPadToken);
  return ids;
}

}  // namespace telescopic
