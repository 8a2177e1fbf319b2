#include "distillkit/corpus/similarity.hpp"

#include <cmath>
#include <unordered_map>

#include "distillkit/errors.hpp"

namespace distillkit::corpus {

double token_f1(const std::vector<std::string>& hypothesis, const std::vector<std::string>& reference) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  std::unordered_map<std::string, long> counts;
  for (const auto& t : reference) ++counts[t];
  long overlap = 0;
  for (const auto& t : hypothesis) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  // 2PR/(P+R) with P = m/|h| and R = m/|r| simplifies to 2m/(|h|+|r|).
  return 2.0 * static_cast<double>(overlap) / static_cast<double>(hypothesis.size() + reference.size());
}

double similarity_score(const SentencePair& pair, const std::vector<std::string>& oracle_target) {
  return token_f1(pair.target, oracle_target);
}

std::map<std::string, QualityStats> corpus_quality_stats(const Corpus& corpus) {
  std::map<std::string, std::vector<double>> scores;
  for (const auto& pair : corpus) {
    if (!pair.similarity) throw Error("unscored pair in language '" + pair.language + "'");
    scores[pair.language].push_back(*pair.similarity);
  }
  std::map<std::string, QualityStats> out;
  for (const auto& [lang, values] : scores) {
    QualityStats s;
    s.count = values.size();
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - s.mean) * (v - s.mean);
    s.std_dev = std::sqrt(var / static_cast<double>(values.size()));
    out[lang] = s;
  }
  return out;
}

}  // namespace distillkit::corpus
