#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace telescopic {

// Fixed 64-word vocabulary. Ids 0..2 are <pad>, <bos>, <eos>; prompts are
// lower-case words separated by whitespace.
class Tokenizer {
 public:
  static constexpr std::size_t kVocabSize = 64;
  static constexpr std::size_t kContextLength = 16;

  // [bos, words..., eos, pad...], exactly kContextLength ids. Prompts longer
  // than the context are truncated with eos kept in the last slot.
  // InputError on an out-of-vocabulary word.
  static std::vector<std::size_t> encode(std::string_view prompt);
  static const std::vector<std::string>& vocabulary();
  static std::size_t id_of(std::string_view word);  // InputError if unknown
};

}  // namespace telescopic
