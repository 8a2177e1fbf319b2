#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace distillkit::corpus {

enum class Provenance { original, distilled, hq };

std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

// Word-order transformation applied after the letter cipher.
enum class ReorderRule { identity, reverse, swap_pairs, rotate };

std::string to_string(ReorderRule r);
ReorderRule reorder_from_string(const std::string& s);

struct SentencePair {
  std::string language;
  std::vector<std::string> source;
  std::vector<std::string> target;
  std::optional<double> similarity;
  Provenance provenance = Provenance::original;

  bool operator==(const SentencePair&) const = default;
};

using Corpus = std::vector<SentencePair>;

struct LanguageSpec {
  std::string id;
  std::string family;
  // First code point of the language's native script block.
  std::int32_t script_offset = 0;
  ReorderRule reorder = ReorderRule::identity;
  std::int64_t pair_count = 0;
  double noise_rate = 0.0;
};

// Number of letters in every script; native letter i is script_offset + i.
inline constexpr int kScriptLetters = 26;

// Throws ConfigError on duplicate ids, overlapping script ranges or
// out-of-range fields.
void validate_specs(const std::vector<LanguageSpec>& specs);

const LanguageSpec& find_spec(const std::vector<LanguageSpec>& specs, const std::string& id);

// Languages in first-appearance order.
std::vector<std::string> languages_of(const Corpus& corpus);

}  // namespace distillkit::corpus
