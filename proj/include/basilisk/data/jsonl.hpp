#pragma once

// Line-delimited JSON ingestion. Accepted fields per line:
//   code | func          non-empty string
//   label | target       0/1, true/false, or "0"/"1"
//   cwe                  optional string (or list; the first entry is used)
//   split                optional train | val | test
// Every line is either a sample or an entry in the error summary.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "basilisk/data/sample.hpp"
#include "json.hpp"

namespace basilisk::data {

struct IngestError {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct IngestResult {
  std::vector<LabeledSample> samples;
  std::vector<IngestError> errors;
  std::size_t lines = 0;

  std::string error_summary() const {
    std::ostringstream os;
    os << errors.size() << " malformed line(s) of " << lines;
    for (const auto& e : errors) os << "\n  line " << e.line << ": " << e.message;
    return os.str();
  }
};

class IngestFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
enum class LabelKind { Integer, Boolean, String };

inline int parse_label(const nlohmann::json& v, LabelKind& kind) {
  if (v.is_boolean()) {
    kind = LabelKind::Boolean;
    return v.get<bool>() ? 1 : 0;
  }
  if (v.is_number_integer() || v.is_number_unsigned()) {
    kind = LabelKind::Integer;
    const auto x = v.get<long long>();
    if (x != 0 && x != 1) throw IngestFailure("label domain: value " + std::to_string(x) + " is not 0 or 1");
    return static_cast<int>(x);
  }
  if (v.is_string()) {
    kind = LabelKind::String;
    const auto s = v.get<std::string>();
    if (s != "0" && s != "1") throw IngestFailure("label domain: value \"" + s + "\" is not \"0\" or \"1\"");
    return s == "1" ? 1 : 0;
  }
  throw IngestFailure("label domain: unsupported label type " + std::string(v.type_name()));
}
}  // namespace detail

/// Parses a JSONL stream. Throws IngestFailure when no line is valid or the
/// label domain is mixed or unknown.
inline IngestResult ingest_jsonl(std::istream& in, const std::string& source = "<stream>") {
  IngestResult r;
  std::string line;
  bool have_kind = false;
  detail::LabelKind first_kind{};
  while (std::getline(in, line)) {
    ++r.lines;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fail = [&](std::string msg) { r.errors.push_back({r.lines, std::move(msg)}); };
    if (line.find_first_not_of(" \t") == std::string::npos) {
      fail("empty line");
      continue;
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(std::string("invalid JSON: ") + e.what());
      continue;
    }
    if (!j.is_object()) {
      fail("record is not a JSON object");
      continue;
    }
    const nlohmann::json* code = j.contains("code") ? &j["code"] : j.contains("func") ? &j["func"] : nullptr;
    const nlohmann::json* label = j.contains("label") ? &j["label"] : j.contains("target") ? &j["target"] : nullptr;
    if (!code) {
      fail("missing code field (code | func)");
      continue;
    }
    if (!code->is_string() || code->get<std::string>().empty()) {
      fail("code field must be a non-empty string");
      continue;
    }
    if (!label) {
      fail("missing label field (label | target)");
      continue;
    }
    LabeledSample s;
    s.code = code->get<std::string>();
    detail::LabelKind kind{};
    s.label = detail::parse_label(*label, kind);
    if (!have_kind) {
      first_kind = kind;
      have_kind = true;
    } else if (kind != first_kind) {
      throw IngestFailure(source + ":" + std::to_string(r.lines) + ": mixed label domain (label types differ between lines)");
    }
    if (j.contains("cwe") && !j["cwe"].is_null()) {
      const auto& c = j["cwe"];
      if (c.is_string() && !c.get<std::string>().empty()) s.cwe = c.get<std::string>();
      else if (c.is_array() && !c.empty() && c[0].is_string()) s.cwe = c[0].get<std::string>();
    }
    if (j.contains("split") && j["split"].is_string()) {
      try {
        s.split = parse_split(j["split"].get<std::string>());
      } catch (const std::invalid_argument& e) {
        fail(e.what());
        continue;
      }
    }
    r.samples.push_back(std::move(s));
  }
  if (r.samples.empty())
    throw IngestFailure(source + ": zero valid records" + (r.lines ? " (" + r.error_summary() + ")" : std::string{}));
  return r;
}

inline IngestResult ingest_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestFailure("cannot open dataset " + path);
  return ingest_jsonl(in, path);
}

inline void write_jsonl(std::ostream& os, const std::vector<LabeledSample>& samples) {
  for (const auto& s : samples) {
    nlohmann::json j{{"code", s.code}, {"label", s.label}, {"split", to_string(s.split)}};
    if (s.cwe) j["cwe"] = *s.cwe;
    os << j.dump() << '\n';
  }
}

}  // namespace basilisk::data
