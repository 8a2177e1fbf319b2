#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "distillkit/corpus/bpe.hpp"
#include "distillkit/corpus/types.hpp"
#include "distillkit/model/transformer.hpp"

namespace distillkit::distill {

struct DistillOptions {
  int beam = 5;
  double length_penalty = 1.0;
  int batch_size = 32;
  // Overrides the per-source default length cap.
  std::optional<int> max_len;
};

struct DistillOutcome {
  corpus::Corpus corpus;
  // Input indices whose decode failed (no eos within the length cap or an
  // empty output); these pairs are absent from `corpus`.
  std::vector<std::size_t> dropped;
};

// Replaces each target by the teacher's best beam hypothesis. Sources,
// languages and order are kept; provenance becomes distilled and the stale
// similarity is cleared. The teacher must be in inference mode.
DistillOutcome distill_corpus(const model::Model& teacher, const corpus::Corpus& corpus,
                              const corpus::VocabPair& vocabs, const DistillOptions& options = {});

}  // namespace distillkit::distill
