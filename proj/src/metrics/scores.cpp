#include "distillkit/metrics/scores.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "distillkit/corpus/utf8.hpp"
#include "distillkit/errors.hpp"

namespace distillkit::metrics {

namespace {

template <typename T>
std::map<std::vector<T>, long> ngram_counts(const std::vector<T>& items, int n) {
  std::map<std::vector<T>, long> out;
  for (std::size_t i = 0; i + n <= items.size(); ++i) ++out[std::vector<T>(items.begin() + i, items.begin() + i + n)];
  return out;
}

template <typename T>
NgramStats compare(const std::vector<T>& hyp, const std::vector<T>& ref, int n) {
  NgramStats s;
  const auto h = ngram_counts(hyp, n);
  const auto r = ngram_counts(ref, n);
  for (const auto& [g, c] : h) {
    s.hyp += c;
    auto it = r.find(g);
    if (it != r.end()) s.match += std::min(c, it->second);
  }
  for (const auto& [g, c] : r) s.ref += c;
  return s;
}

std::vector<std::string> characters(const std::string& text) {
  std::vector<std::string> out;
  for (auto& cp : corpus::utf8::split_code_points(text)) {
    if (cp != " " && cp != "\t" && cp != "\n") out.push_back(std::move(cp));
  }
  return out;
}

std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(' ', start);
    if (end == std::string::npos) end = text.size();
    if (end > start) out.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return out;
}

}  // namespace

double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  if (hypotheses.size() != references.size()) {
    throw Error("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses for " +
                std::to_string(references.size()) + " references");
  }
  long matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  long hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    hyp_len += static_cast<long>(hypotheses[i].size());
    ref_len += static_cast<long>(references[i].size());
    for (int n = 1; n <= 4; ++n) {
      const auto s = compare(hypotheses[i], references[i], n);
      matches[n - 1] += s.match;
      totals[n - 1] += s.hyp;
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (matches[n] == 0 || totals[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
  }
  const double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

std::vector<NgramStats> chrf_statistics(const std::vector<std::string>& hypotheses,
                                        const std::vector<std::string>& references, const ChrfOptions& options) {
  if (hypotheses.size() != references.size()) throw Error("chrf_pp: hypothesis and reference counts differ");
  std::vector<NgramStats> total(static_cast<std::size_t>(options.char_order + options.word_order));
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto hc = characters(hypotheses[i]), rc = characters(references[i]);
    if (rc.empty()) throw Error("chrf_pp: empty reference at index " + std::to_string(i));
    const auto hw = words(hypotheses[i]), rw = words(references[i]);
    for (int n = 1; n <= options.char_order + options.word_order; ++n) {
      const auto s = n <= options.char_order ? compare(hc, rc, n) : compare(hw, rw, n - options.char_order);
      auto& t = total[static_cast<std::size_t>(n - 1)];
      t.hyp += s.hyp;
      t.ref += s.ref;
      t.match += s.match;
    }
  }
  return total;
}

double chrf_from_statistics(const std::vector<NgramStats>& stats, double beta) {
  const double b2 = beta * beta;
  double sum = 0.0;
  int effective = 0;
  for (const auto& s : stats) {
    if (s.hyp == 0 || s.ref == 0) continue;
    ++effective;
    const double p = static_cast<double>(s.match) / static_cast<double>(s.hyp);
    const double r = static_cast<double>(s.match) / static_cast<double>(s.ref);
    if (p + r > 0.0) sum += (1.0 + b2) * p * r / (b2 * p + r);
  }
  return effective == 0 ? 0.0 : 100.0 * sum / effective;
}

double chrf_pp(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
               const ChrfOptions& options) {
  return chrf_from_statistics(chrf_statistics(hypotheses, references, options), options.beta);
}

bool early_stop(const std::vector<double>& history, int patience) {
  if (history.empty()) return false;
  const auto best = std::max_element(history.begin(), history.end()) - history.begin();
  return static_cast<long>(history.size()) - 1 - best > patience;
}

std::string detokenize(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

}  // namespace distillkit::metrics
