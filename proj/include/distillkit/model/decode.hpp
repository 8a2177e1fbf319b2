#pragma once

#include <span>
#include <vector>

#include "distillkit/model/transformer.hpp"

namespace distillkit::model {

struct Hypothesis {
  // Target ids, ending with eos when complete.
  std::vector<int> tokens;
  // Sum of token log-probabilities.
  double log_prob = 0.0;
  // log_prob / len^length_penalty.
  double score = 0.0;
  bool complete = true;
};

// Source of next-token log-probabilities for a set of growing prefixes
// ("rows"). Every sentence starts with one row holding only bos.
class IncrementalScorer {
 public:
  virtual ~IncrementalScorer() = default;
  virtual int vocab_size() const = 0;
  virtual int sentences() const = 0;
  // Resets to one row per sentence; returns [sentences, V] log-probs.
  virtual std::vector<double> start() = 0;
  // New row r extends old row parents[r] by tokens[r]; returns [rows, V]
  // log-probs for the next position.
  virtual std::vector<double> advance(std::span<const int> parents, std::span<const int> tokens) = 0;
};

struct BeamOptions {
  int beam = 5;
  double length_penalty = 1.0;
  // Also run beam 1 and keep its result when it scores strictly higher.
  bool anchor_greedy = true;
};

// Batched beam search. Candidates rank by raw log-probability, then lower
// token id, then earlier parent. Walking the ranked candidates, an eos
// extension is finalized while fewer than `beam` live prefixes were kept; at
// max_len every eos extension is finalized. A sentence stops once it has
// `beam` finalized hypotheses or no live prefix. The result is the finalized
// hypothesis with the best length-normalized score (earlier on ties), or the
// best partial prefix flagged incomplete if nothing finalized. pad and bos are
// never generated.
std::vector<Hypothesis> beam_search(IncrementalScorer& scorer, std::span<const int> max_len,
                                    const BeamOptions& options);

// Incremental decoder over a model in inference mode, with per-row
// self-attention caches.
class ModelScorer : public IncrementalScorer {
 public:
  // `sources` are id sequences without eos.
  ModelScorer(const Model& model, const std::vector<std::vector<int>>& sources);

  int vocab_size() const override { return model_.config().vocab_tgt; }
  int sentences() const override { return batch_; }
  std::vector<double> start() override;
  std::vector<double> advance(std::span<const int> parents, std::span<const int> tokens) override;

 private:
  std::vector<double> step(std::span<const int> tokens);

  const Model& model_;
  int batch_ = 0;
  int src_len_ = 0;
  std::vector<std::uint8_t> src_valid_;
  // Cross-attention keys and values per unique decoder layer, [batch * src_len, d].
  std::vector<std::vector<double>> cross_k_, cross_v_;
  // Self-attention caches per layer application, [rows, t, d].
  std::vector<std::vector<double>> self_k_, self_v_;
  std::vector<int> row_sentence_;
  int t_ = 0;
};

// Length-capped decoding of each source (ids without eos).
std::vector<Hypothesis> decode_batch(const Model& model, const std::vector<std::vector<int>>& sources,
                                     std::span<const int> max_len, const BeamOptions& options);

Hypothesis decode_beam(const Model& model, const std::vector<int>& source, int beam, int max_len,
                       double length_penalty = 1.0);

// Default length cap for a source of `source_len` ids.
int default_max_len(const ModelConfig& cfg, int source_len);

}  // namespace distillkit::model
