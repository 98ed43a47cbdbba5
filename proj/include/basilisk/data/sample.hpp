#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace basilisk::data {

enum class Split { Train, Val, Test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val" || s == "valid" || s == "validation") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

struct LabeledSample {
  std::string code;
  int label = 0;  // 0 safe, 1 vulnerable
  std::optional<std::string> cwe;
  Split split = Split::Train;
};

}  // namespace basilisk::data
