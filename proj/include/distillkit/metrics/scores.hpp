#pragma once

#include <string>
#include <vector>

namespace distillkit::metrics {

using Tokens = std::vector<std::string>;

// Corpus BLEU-4 in [0, 100]: clipped n-gram precisions (n = 1..4) pooled
// over the corpus, geometric mean, brevity penalty exp(1 - r/c) when c <= r.
// No smoothing: any zero precision gives 0. Throws Error on count mismatch.
double corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references);

struct ChrfOptions {
  int char_order = 6;
  int word_order = 2;
  double beta = 2.0;
};

// Per-order n-gram statistics pooled over the corpus.
struct NgramStats {
  long hyp = 0;
  long ref = 0;
  long match = 0;
};

// Character n-grams skip whitespace; word n-grams split on single spaces.
// Returns char orders 1..char_order followed by word orders 1..word_order.
std::vector<NgramStats> chrf_statistics(const std::vector<std::string>& hypotheses,
                                        const std::vector<std::string>& references, const ChrfOptions& options = {});

// F-beta averaged over the orders present in both hypothesis and reference
// statistics, times 100; 0 when no order is present.
double chrf_from_statistics(const std::vector<NgramStats>& stats, double beta = 2.0);

// chrF++ in [0, 100]. Throws Error on count mismatch or an empty reference.
double chrf_pp(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references,
               const ChrfOptions& options = {});

// True iff the first occurrence of the best value is more than `patience`
// rounds before the latest round.
bool early_stop(const std::vector<double>& history, int patience = 5);

std::string detokenize(const Tokens& tokens);

}  // namespace distillkit::metrics
