#include "distillkit/pipeline/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "distillkit/errors.hpp"
#include "distillkit/metrics/scores.hpp"
#include "distillkit/model/decode.hpp"

namespace distillkit::pipeline {

EncodedCorpus encode_corpus(const corpus::Corpus& corpus, const corpus::VocabPair& vocabs) {
  EncodedCorpus out;
  out.sources.reserve(corpus.size());
  out.targets.reserve(corpus.size());
  for (const auto& p : corpus) {
    out.sources.push_back(vocabs.source.encode(p.source));
    out.targets.push_back(vocabs.target.encode(p.target));
    out.languages.push_back(p.language);
  }
  return out;
}

DevSet make_dev_set(const corpus::Corpus& corpus, const corpus::VocabPair& vocabs) {
  DevSet dev;
  for (const auto& p : corpus) {
    dev.sources.push_back(vocabs.source.encode(p.source));
    dev.references.push_back(p.target);
    dev.languages.push_back(p.language);
  }
  return dev;
}

void TrainerOptions::validate() const {
  optimizer.validate();
  if (batch_tokens < 1) throw ConfigError("batch_tokens must be positive");
  if (max_updates < 0) throw ConfigError("max_updates must be non-negative");
  if (eval_interval < 1) throw ConfigError("eval_interval must be positive");
  if (patience < 0) throw ConfigError("patience must be non-negative");
}

nlohmann::json outcome_to_json(const TrainOutcome& o) {
  nlohmann::json j;
  j["updates"] = o.updates;
  j["best_step"] = o.best_step;
  j["initial_dev_bleu"] = o.initial_dev_bleu;
  j["best_dev_bleu"] = o.best_dev_bleu;
  j["final_dev_bleu"] = o.final_dev_bleu;
  j["early_stopped"] = o.early_stopped;
  auto& evals = j["evals"] = nlohmann::json::array();
  for (const auto& e : o.evals) evals.push_back({{"step", e.step}, {"dev_bleu", e.dev_bleu}, {"train_loss", e.train_loss}});
  return j;
}

double dev_bleu(const model::Model& model, const DevSet& dev, const corpus::Vocab& target_vocab, int batch_size) {
  if (dev.sources.empty()) throw PreconditionError("empty dev set");
  model::BeamOptions greedy;
  greedy.beam = 1;
  greedy.anchor_greedy = false;
  std::vector<metrics::Tokens> hyps;
  for (std::size_t start = 0; start < dev.sources.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(dev.sources.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::vector<int>> batch(dev.sources.begin() + static_cast<std::ptrdiff_t>(start),
                                        dev.sources.begin() + static_cast<std::ptrdiff_t>(end));
    std::vector<int> max_len;
    for (const auto& s : batch) max_len.push_back(model::default_max_len(model.config(), static_cast<int>(s.size())));
    for (const auto& h : model::decode_batch(model, batch, max_len, greedy)) {
      const auto n = h.complete && !h.tokens.empty() ? h.tokens.size() - 1 : h.tokens.size();
      hyps.push_back(target_vocab.decode(std::span<const int>(h.tokens.data(), n)));
    }
  }
  return metrics::corpus_bleu(hyps, dev.references);
}

std::vector<std::vector<std::size_t>> make_batches(const EncodedCorpus& data, int batch_tokens, numerics::Rng& rng) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  auto len = [&](std::size_t i) { return std::max(data.sources[i].size(), data.targets[i].size()) + 1; };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return len(a) < len(b); });
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> current;
  std::size_t longest = 0;
  for (auto i : order) {
    const auto l = std::max(longest, len(i));
    if (!current.empty() && l * (current.size() + 1) > static_cast<std::size_t>(batch_tokens)) {
      batches.push_back(std::move(current));
      current.clear();
      longest = 0;
    }
    current.push_back(i);
    longest = std::max(longest, len(i));
  }
  if (!current.empty()) batches.push_back(std::move(current));
  rng.shuffle(std::span<std::vector<std::size_t>>(batches));
  return batches;
}

TrainOutcome train_model(model::Model& student, const model::Model* teacher, const EncodedCorpus& data,
                         const DevSet& dev, const corpus::Vocab& target_vocab, const distill::DistillPlan& plan,
                         const TrainerOptions& options) {
  options.validate();
  plan.validate();
  if (data.size() == 0) throw PreconditionError("empty training corpus");
  if (plan.needs_teacher() && teacher == nullptr) {
    throw PreconditionError("distillation mode " + distill::to_string(plan.mode) + " requires a teacher");
  }

  std::vector<std::string> languages(data.languages);
  std::sort(languages.begin(), languages.end());
  languages.erase(std::unique(languages.begin(), languages.end()), languages.end());

  TrainOutcome out;
  out.state = distill::make_train_state(plan, languages);
  numerics::Rng rng(options.seed);
  auto batch_rng = rng.fork(numerics::stable_hash("batches"));
  student.reseed_dropout(rng.fork(numerics::stable_hash("dropout")).next_u64());

  auto evaluate = [&](double train_loss) {
    student.set_training(false);
    const double bleu = dev_bleu(student, dev, target_vocab);
    out.evals.push_back({out.updates, bleu, train_loss});
    spdlog::info("step {}: dev BLEU {:.2f}, train loss {:.4f}", out.updates, bleu, train_loss);
    return bleu;
  };

  // The starting point is logged but competes for "best" only when no update runs.
  auto best_weights = student.snapshot();
  out.initial_dev_bleu = evaluate(0.0);
  out.best_dev_bleu = out.initial_dev_bleu;
  out.best_step = 0;
  bool have_best = false;

  double loss_sum = 0.0;
  std::int64_t loss_count = 0;
  std::vector<std::vector<std::size_t>> batches;
  std::size_t cursor = 0;
  try {
    while (out.updates < options.max_updates) {
      if (cursor == batches.size()) {
        batches = make_batches(data, options.batch_tokens, batch_rng);
        cursor = 0;
      }
      const auto& idx = batches[cursor++];
      std::vector<std::vector<int>> src, tgt;
      std::vector<std::string> langs;
      for (auto i : idx) {
        src.push_back(data.sources[i]);
        tgt.push_back(data.targets[i]);
        langs.push_back(data.languages[i]);
      }
      const auto batch = model::make_batch(src, tgt, std::move(langs));
      student.set_training(true, options.optimizer.dropout);
      const auto r = distill::training_step(student, teacher, batch, plan, out.state, options.optimizer);
      ++out.updates;
      loss_sum += r.loss;
      ++loss_count;

      const bool last = out.updates == options.max_updates;
      if (out.updates % options.eval_interval == 0 || last) {
        const double bleu = evaluate(loss_sum / static_cast<double>(loss_count));
        out.state.dev_history.push_back(bleu);
        loss_sum = 0.0;
        loss_count = 0;
        if (!have_best || bleu > out.best_dev_bleu) {
          have_best = true;
          out.best_dev_bleu = bleu;
          out.best_step = out.updates;
          best_weights = student.snapshot();
        }
        if (metrics::early_stop(out.state.dev_history, options.patience)) {
          spdlog::info("early stop at step {} (best {:.2f} at step {})", out.updates, out.best_dev_bleu, out.best_step);
          out.early_stopped = true;
          break;
        }
      }
    }
  } catch (const DivergenceError&) {
    student.set_training(false);
    student.restore(best_weights);
    throw;
  }
  student.set_training(false);
  out.final_weights = student.snapshot();
  out.final_dev_bleu = out.evals.back().dev_bleu;
  if (out.evals.back().step != out.updates) out.final_dev_bleu = dev_bleu(student, dev, target_vocab);
  student.restore(best_weights);
  return out;
}

}  // namespace distillkit::pipeline
