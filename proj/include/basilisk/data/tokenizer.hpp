#pragma once

// Byte-level tokenizer: ids 0-255 are raw bytes, followed by the special tokens.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace basilisk::data {

struct SpecialTokens {
  static constexpr std::uint32_t pad = 256;
  static constexpr std::uint32_t bos = 257;
  static constexpr std::uint32_t eos = 258;
  static constexpr std::uint32_t fim_prefix = 259;
  static constexpr std::uint32_t fim_middle = 260;
  static constexpr std::uint32_t fim_suffix = 261;
};

inline constexpr std::uint32_t kVocabSize = 262;

class ByteTokenizer {
 public:
  static constexpr std::uint32_t vocab_size() noexcept { return kVocabSize; }

  std::vector<std::uint32_t> encode(std::string_view text, bool add_bos = false, bool add_eos = false) const {
    std::vector<std::uint32_t> ids;
    ids.reserve(text.size() + 2);
    if (add_bos) ids.push_back(SpecialTokens::bos);
    for (unsigned char c : text) ids.push_back(c);
    if (add_eos) ids.push_back(SpecialTokens::eos);
    return ids;
  }

  /// Special tokens are dropped; ids outside the vocabulary are an error.
  std::string decode(std::span<const std::uint32_t> ids) const {
    std::string out;
    out.reserve(ids.size());
    for (std::uint32_t id : ids) {
      if (id >= kVocabSize) throw std::out_of_range("tokenizer: id " + std::to_string(id) + " outside vocabulary");
      if (id < 256) out.push_back(static_cast<char>(id));
    }
    return out;
  }
};

}  // namespace basilisk::data
