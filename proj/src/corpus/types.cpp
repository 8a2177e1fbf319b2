#include "distillkit/corpus/types.hpp"

#include <algorithm>
#include <set>

#include "distillkit/errors.hpp"

namespace distillkit::corpus {

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::original: return "original";
    case Provenance::distilled: return "distilled";
    case Provenance::hq: return "hq";
  }
  return "original";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "original") return Provenance::original;
  if (s == "distilled") return Provenance::distilled;
  if (s == "hq") return Provenance::hq;
  throw Error("unknown provenance '" + s + "'");
}

std::string to_string(ReorderRule r) {
  switch (r) {
    case ReorderRule::identity: return "identity";
    case ReorderRule::reverse: return "reverse";
    case ReorderRule::swap_pairs: return "swap_pairs";
    case ReorderRule::rotate: return "rotate";
  }
  return "identity";
}

ReorderRule reorder_from_string(const std::string& s) {
  if (s == "identity") return ReorderRule::identity;
  if (s == "reverse") return ReorderRule::reverse;
  if (s == "swap_pairs") return ReorderRule::swap_pairs;
  if (s == "rotate") return ReorderRule::rotate;
  throw ConfigError("unknown reorder rule '" + s + "'");
}

void validate_specs(const std::vector<LanguageSpec>& specs) {
  if (specs.empty()) throw ConfigError("no languages specified");
  std::set<std::string> ids;
  for (const auto& s : specs) {
    if (s.id.empty() || s.family.empty()) throw ConfigError("language id and family must be non-empty");
    if (s.id.find_first_of(" \t\n") != std::string::npos) throw ConfigError("language id contains whitespace");
    if (!ids.insert(s.id).second) throw ConfigError("duplicate language id '" + s.id + "'");
    if (s.script_offset < 128) throw ConfigError("script offset of '" + s.id + "' collides with ASCII");
    if (s.pair_count < 0) throw ConfigError("negative pair count for '" + s.id + "'");
    if (!(s.noise_rate >= 0.0 && s.noise_rate <= 1.0)) throw ConfigError("noise rate of '" + s.id + "' outside [0, 1]");
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    for (std::size_t j = i + 1; j < specs.size(); ++j) {
      const auto a = specs[i].script_offset, b = specs[j].script_offset;
      if (a < b + kScriptLetters && b < a + kScriptLetters) {
        throw ConfigError("script ranges of '" + specs[i].id + "' and '" + specs[j].id + "' overlap");
      }
    }
  }
}

const LanguageSpec& find_spec(const std::vector<LanguageSpec>& specs, const std::string& id) {
  auto it = std::find_if(specs.begin(), specs.end(), [&](const LanguageSpec& s) { return s.id == id; });
  if (it == specs.end()) throw Error("unknown language '" + id + "'");
  return *it;
}

std::vector<std::string> languages_of(const Corpus& corpus) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& p : corpus) {
    if (seen.insert(p.language).second) out.push_back(p.language);
  }
  return out;
}

}  // namespace distillkit::corpus
