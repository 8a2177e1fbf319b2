#pragma once

// Small models and reference decoders shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "distillkit/model/decode.hpp"
#include "distillkit/model/transformer.hpp"
#include "distillkit/numerics/ops.hpp"

namespace distillkit::testing {

inline model::ModelConfig toy_config(int layers = 2, int unique = 2, int vocab_tgt = 11) {
  model::ModelConfig c;
  c.name = "toy";
  c.d_model = 16;
  c.d_ff = 32;
  c.layers = layers;
  c.heads = 4;
  c.unique_layers = unique;
  c.vocab_src = 13;
  c.vocab_tgt = vocab_tgt;
  c.max_positions = 32;
  return c;
}

// Random non-reserved source ids (>= 4) of random length in [lo, hi].
inline std::vector<std::vector<int>> random_sources(numerics::Rng& rng, int count, int vocab, int lo, int hi) {
  std::vector<std::vector<int>> out(count);
  for (auto& s : out) {
    const int len = lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
    for (int i = 0; i < len; ++i) s.push_back(4 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(vocab - 4))));
  }
  return out;
}

inline model::Batch random_batch(numerics::Rng& rng, const model::ModelConfig& cfg, int n,
                                std::vector<std::string> languages = {}) {
  auto src = random_sources(rng, n, cfg.vocab_src, 1, 6);
  auto tgt = random_sources(rng, n, cfg.vocab_tgt, 1, 5);
  return model::make_batch(src, tgt, std::move(languages));
}

// Next-token log-probabilities after `prefix` via a full (non-incremental) forward.
inline std::vector<double> full_next_log_probs(const model::Model& m, const std::vector<int>& source,
                                               const std::vector<int>& prefix) {
  numerics::NoGradGuard guard;
  int src_len = 0;
  const auto src = model::pad_sources({source}, src_len);
  std::vector<int> tgt_in{1};
  tgt_in.insert(tgt_in.end(), prefix.begin(), prefix.end());
  const auto enc = m.encode(src, 1, src_len);
  const auto logits = m.decode(enc, tgt_in, static_cast<int>(tgt_in.size()));
  const auto lp = numerics::log_softmax_rows(logits.data(), logits.cols());
  const auto V = static_cast<std::size_t>(logits.cols());
  return {lp.end() - static_cast<std::ptrdiff_t>(V), lp.end()};
}

inline double sequence_log_prob(const model::Model& m, const std::vector<int>& source, const std::vector<int>& tokens) {
  double total = 0.0;
  std::vector<int> prefix;
  for (int t : tokens) {
    total += full_next_log_probs(m, source, prefix)[static_cast<std::size_t>(t)];
    prefix.push_back(t);
  }
  return total;
}

// Step-wise argmax over non-reserved-start tokens (ids other than pad and
// bos), lower id on ties; eos is forced at max_len.
inline model::Hypothesis greedy_oracle(const model::Model& m, const std::vector<int>& source, int max_len,
                                       double penalty = 1.0) {
  model::Hypothesis h;
  for (int t = 1;; ++t) {
    const auto lp = full_next_log_probs(m, source, h.tokens);
    int best = 2;
    if (t < max_len) {
      for (int v = 2; v < static_cast<int>(lp.size()); ++v) {
        if (lp[v] > lp[best]) best = v;
      }
    }
    h.log_prob += lp[best];
    h.tokens.push_back(best);
    if (best == 2) break;
  }
  h.score = h.log_prob / std::pow(static_cast<double>(h.tokens.size()), penalty);
  return h;
}

// Every eos-terminated sequence of at most max_len tokens over ids >= 2;
// best normalized score, earlier enumeration order on ties.
inline model::Hypothesis exhaustive_oracle(const model::Model& m, const std::vector<int>& source, int max_len,
                                           double penalty = 1.0) {
  const int V = m.config().vocab_tgt;
  model::Hypothesis best;
  best.score = -INFINITY;
  std::function<void(std::vector<int>&)> walk = [&](std::vector<int>& prefix) {
    std::vector<int> done = prefix;
    done.push_back(2);
    const double lp = sequence_log_prob(m, source, done);
    const double score = lp / std::pow(static_cast<double>(done.size()), penalty);
    if (score > best.score) best = {done, lp, score, true};
    if (static_cast<int>(done.size()) >= max_len) return;
    for (int v = 3; v < V; ++v) {
      prefix.push_back(v);
      walk(prefix);
      prefix.pop_back();
    }
  };
  std::vector<int> empty;
  walk(empty);
  return best;
}

}  // namespace distillkit::testing
