#include "distillkit/distill/distill_corpus.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

#include <spdlog/spdlog.h>

#include "distillkit/errors.hpp"
#include "distillkit/model/decode.hpp"

namespace distillkit::distill {

DistillOutcome distill_corpus(const model::Model& teacher, const corpus::Corpus& corpus,
                              const corpus::VocabPair& vocabs, const DistillOptions& options) {
  if (teacher.training()) throw PreconditionError("distill_corpus: teacher must be in inference mode");
  if (options.batch_size < 1) throw ConfigError("distill_corpus: batch_size must be positive");
  std::vector<std::vector<int>> encoded(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) encoded[i] = vocabs.source.encode(corpus[i].source);

  // Length-sorted batches waste less work on padding; results go back by index.
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return encoded[a].size() < encoded[b].size(); });

  model::BeamOptions beam;
  beam.beam = options.beam;
  beam.length_penalty = options.length_penalty;
  std::vector<std::optional<std::vector<std::string>>> targets(corpus.size());
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
    std::vector<std::vector<int>> sources;
    std::vector<int> max_len;
    for (std::size_t k = start; k < end; ++k) {
      sources.push_back(encoded[order[k]]);
      max_len.push_back(options.max_len ? *options.max_len
                                        : model::default_max_len(teacher.config(), static_cast<int>(sources.back().size())));
    }
    const auto hyps = model::decode_batch(teacher, sources, max_len, beam);
    for (std::size_t k = start; k < end; ++k) {
      const auto& h = hyps[k - start];
      if (!h.complete || h.tokens.size() < 2) continue;
      auto words = vocabs.target.decode(std::span<const int>(h.tokens.data(), h.tokens.size() - 1));
      if (!words.empty()) targets[order[k]] = std::move(words);
    }
  }

  DistillOutcome out;
  out.corpus.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!targets[i]) {
      spdlog::warn("distill_corpus: dropping pair {} ({}): teacher produced no complete hypothesis", i,
                   corpus[i].language);
      out.dropped.push_back(i);
      continue;
    }
    auto pair = corpus[i];
    pair.target = std::move(*targets[i]);
    pair.provenance = corpus::Provenance::distilled;
    pair.similarity.reset();
    out.corpus.push_back(std::move(pair));
  }
  return out;
}

}  // namespace distillkit::distill
