#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distillkit/corpus/bpe.hpp"
#include "distillkit/corpus/types.hpp"
#include "distillkit/distill/plan.hpp"
#include "distillkit/distill/training.hpp"
#include "distillkit/model/transformer.hpp"
#include "distillkit/numerics/optim.hpp"

namespace distillkit::pipeline {

// Id sequences (without bos/eos) of a corpus.
struct EncodedCorpus {
  std::vector<std::vector<int>> sources;
  std::vector<std::vector<int>> targets;
  std::vector<std::string> languages;

  std::size_t size() const { return sources.size(); }
};

EncodedCorpus encode_corpus(const corpus::Corpus& corpus, const corpus::VocabPair& vocabs);

// Validation sources with word-level references.
struct DevSet {
  std::vector<std::vector<int>> sources;
  std::vector<std::vector<std::string>> references;
  std::vector<std::string> languages;
};

DevSet make_dev_set(const corpus::Corpus& corpus, const corpus::VocabPair& vocabs);

struct TrainerOptions {
  numerics::OptimizerConfig optimizer;
  // Upper bound on max(source, target) length times sentences per batch.
  int batch_tokens = 2000;
  std::int64_t max_updates = 2000;
  int eval_interval = 250;
  int patience = 5;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EvalPoint {
  std::int64_t step = 0;
  double dev_bleu = 0.0;
  double train_loss = 0.0;
};

struct TrainOutcome {
  std::int64_t updates = 0;
  std::int64_t best_step = 0;
  double initial_dev_bleu = 0.0;
  double best_dev_bleu = 0.0;
  bool early_stopped = false;
  std::vector<EvalPoint> evals;
  // Parameter values after the last update; the model itself ends at the best
  // validation point.
  std::vector<std::vector<double>> final_weights;
  double final_dev_bleu = 0.0;
  distill::TrainState state;
};

nlohmann::json outcome_to_json(const TrainOutcome& outcome);

// Corpus BLEU of greedy decodes of the dev set.
double dev_bleu(const model::Model& model, const DevSet& dev, const corpus::Vocab& target_vocab, int batch_size = 64);

// Token-budget batches over a shuffled, length-sorted order; batch order is
// shuffled too. Deterministic in `rng`.
std::vector<std::vector<std::size_t>> make_batches(const EncodedCorpus& data, int batch_tokens, numerics::Rng& rng);

// Trains `student` under `plan`: token batching, warmup/inverse-sqrt
// schedule, clipping, dev BLEU every eval_interval updates and at the end,
// early stopping, and best-checkpoint retention over the evaluations after
// updates (ties keep the earlier point). The starting point is evaluated and
// logged, and is kept only when max_updates is 0. On divergence the model is
// reset to the best point and DivergenceError propagates.
TrainOutcome train_model(model::Model& student, const model::Model* teacher, const EncodedCorpus& data,
                         const DevSet& dev, const corpus::Vocab& target_vocab, const distill::DistillPlan& plan,
                         const TrainerOptions& options);

}  // namespace distillkit::pipeline
