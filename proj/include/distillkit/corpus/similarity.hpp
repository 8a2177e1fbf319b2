#pragma once

#include <map>
#include <string>
#include <vector>

#include "distillkit/corpus/types.hpp"

namespace distillkit::corpus {

// Multiset token F1; 0 when either side is empty.
double token_f1(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference);

double similarity_score(const SentencePair& pair, const std::vector<std::string>& oracle_target);

struct QualityStats {
  double mean = 0.0;
  double std_dev = 0.0;
  std::size_t count = 0;
};

// Population statistics per language. Throws Error on an unscored pair.
std::map<std::string, QualityStats> corpus_quality_stats(const Corpus& corpus);

}  // namespace distillkit::corpus
