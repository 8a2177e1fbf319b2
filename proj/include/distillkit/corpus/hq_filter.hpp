#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "distillkit/corpus/types.hpp"

namespace distillkit::corpus {

struct FilterPolicy {
  enum class Mode { per_language_k, global_k };

  // Explicit k overrides the search for that language.
  std::map<std::string, double> k_per_language;
  double target_fraction = 0.20;
  // Largest accepted gap between realized and target retention before the
  // search falls back to rank selection.
  double tolerance = 0.02;
  Mode mode = Mode::per_language_k;
};

struct LanguageFilterStats {
  std::size_t total = 0;
  std::size_t kept = 0;
  double mean = 0.0;
  double std_dev = 0.0;
  // Empty when the language was filtered by rank.
  std::optional<double> k;
  std::optional<double> threshold;
  bool rank_fallback = false;
};

struct FilterResult {
  Corpus corpus;
  // Realized k of every language that was filtered by threshold.
  std::map<std::string, double> k_per_language;
  std::map<std::string, LanguageFilterStats> stats;
  std::vector<std::string> excluded_languages;
};

// Keeps pairs with score > mu_L + k_L * sigma_L, searching k_L per language
// (or one shared k over z-scores in global mode) so retention is close to the
// target. When sigma_L = 0 or no threshold lands within tolerance, keeps the
// top ceil(fraction * n_L) pairs by score, earlier index first on ties.
// Kept pairs keep their order and get provenance hq. Throws Error on unscored
// pairs.
FilterResult hq_filter(const Corpus& corpus, const FilterPolicy& policy);

}  // namespace distillkit::corpus
