#include "distillkit/model/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "distillkit/errors.hpp"
#include "distillkit/numerics/ops.hpp"

namespace distillkit::model {

using namespace numerics;

namespace {

constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;

struct Prefix {
  std::vector<int> tokens;
  double log_prob = 0.0;
  int row = 0;
};

struct Candidate {
  double log_prob;
  int token;
  int parent;
};

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  if (a.token != b.token) return a.token < b.token;
  return a.parent < b.parent;
}

double normalized(double log_prob, std::size_t len, double penalty) {
  return log_prob / std::pow(static_cast<double>(std::max<std::size_t>(len, 1)), penalty);
}

std::vector<Hypothesis> run_beam(IncrementalScorer& scorer, std::span<const int> max_len, int beam,
                                 double penalty) {
  const int n = scorer.sentences();
  const int V = scorer.vocab_size();
  if (static_cast<int>(max_len.size()) != n) throw ShapeError("beam_search: one max_len per sentence required");
  if (beam < 1) throw ConfigError("beam must be at least 1");

  std::vector<std::vector<Prefix>> live(n);
  std::vector<std::vector<Hypothesis>> finalized(n);
  std::vector<bool> done(n, false);
  for (int s = 0; s < n; ++s) {
    if (max_len[s] < 1) throw ConfigError("max_len must be at least 1");
    live[s].push_back({{}, 0.0, s});
  }

  std::vector<double> lp = scorer.start();
  std::vector<Candidate> cands;
  for (int t = 1;; ++t) {
    std::vector<int> parents, tokens;
    for (int s = 0; s < n; ++s) {
      if (done[s]) continue;
      auto& cur = live[s];
      std::vector<Prefix> next;
      if (t >= max_len[s]) {
        for (const auto& p : cur) {
          const double v = p.log_prob + lp[static_cast<std::size_t>(p.row) * V + kEos];
          if (!std::isfinite(v)) continue;
          Hypothesis h{p.tokens, v, 0.0, true};
          h.tokens.push_back(kEos);
          h.score = normalized(v, h.tokens.size(), penalty);
          finalized[s].push_back(std::move(h));
        }
        done[s] = true;
        continue;
      }
      cands.clear();
      for (int i = 0; i < static_cast<int>(cur.size()); ++i) {
        const double* row = lp.data() + static_cast<std::size_t>(cur[i].row) * V;
        for (int v = 0; v < V; ++v) {
          if (v == kPad || v == kBos) continue;
          const double score = cur[i].log_prob + row[v];
          if (std::isfinite(score)) cands.push_back({score, v, i});
        }
      }
      // Each prefix has one eos extension, so 2 * beam candidates suffice.
      const auto keep = std::min<std::size_t>(cands.size(), 2 * static_cast<std::size_t>(beam));
      std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), ranks_before);
      for (std::size_t c = 0; c < keep && static_cast<int>(next.size()) < beam; ++c) {
        const auto& cand = cands[c];
        const auto& parent = cur[cand.parent];
        if (cand.token == kEos) {
          Hypothesis h{parent.tokens, cand.log_prob, 0.0, true};
          h.tokens.push_back(kEos);
          h.score = normalized(cand.log_prob, h.tokens.size(), penalty);
          finalized[s].push_back(std::move(h));
        } else {
          // `row` temporarily holds the parent's row.
          Prefix p{parent.tokens, cand.log_prob, parent.row};
          p.tokens.push_back(cand.token);
          next.push_back(std::move(p));
        }
      }
      if (static_cast<int>(finalized[s].size()) >= beam || next.empty()) {
        done[s] = true;
      } else {
        for (auto& p : next) {
          parents.push_back(p.row);
          tokens.push_back(p.tokens.back());
          p.row = static_cast<int>(parents.size()) - 1;
        }
      }
      // An exhausted sentence keeps its last prefixes as partial results.
      if (!next.empty()) cur = std::move(next);
    }
    if (parents.empty()) break;
    lp = scorer.advance(parents, tokens);
  }

  std::vector<Hypothesis> out(n);
  for (int s = 0; s < n; ++s) {
    if (!finalized[s].empty()) {
      const Hypothesis* best = &finalized[s][0];
      for (const auto& h : finalized[s]) {
        if (h.score > best->score) best = &h;
      }
      out[s] = *best;
    } else if (!live[s].empty()) {
      const Prefix* best = &live[s][0];
      for (const auto& p : live[s]) {
        if (normalized(p.log_prob, p.tokens.size(), penalty) > normalized(best->log_prob, best->tokens.size(), penalty)) {
          best = &p;
        }
      }
      out[s] = {best->tokens, best->log_prob, normalized(best->log_prob, best->tokens.size(), penalty), false};
    } else {
      out[s] = {{}, 0.0, 0.0, false};
    }
  }
  return out;
}

}  // namespace

std::vector<Hypothesis> beam_search(IncrementalScorer& scorer, std::span<const int> max_len,
                                    const BeamOptions& options) {
  auto result = run_beam(scorer, max_len, options.beam, options.length_penalty);
  if (options.anchor_greedy && options.beam > 1) {
    const auto greedy = run_beam(scorer, max_len, 1, options.length_penalty);
    for (std::size_t s = 0; s < result.size(); ++s) {
      const bool beam_ok = result[s].complete;
      if ((greedy[s].complete && !beam_ok) ||
          (greedy[s].complete == beam_ok && greedy[s].score > result[s].score)) {
        result[s] = greedy[s];
      }
    }
  }
  return result;
}

ModelScorer::ModelScorer(const Model& model, const std::vector<std::vector<int>>& sources) : model_(model) {
  if (model.training()) throw Error("incremental decoding requires a model in inference mode");
  NoGradGuard guard;
  batch_ = static_cast<int>(sources.size());
  const auto src = pad_sources(sources, src_len_);
  const auto enc = model.encode(src, batch_, src_len_);
  src_valid_ = enc.valid;
  for (const auto& l : model.decoder_layers()) {
    const Tensor k = linear(enc.memory, l.cross_attn.k_w, l.cross_attn.k_b);
    const Tensor v = linear(enc.memory, l.cross_attn.v_w, l.cross_attn.v_b);
    cross_k_.emplace_back(k.data().begin(), k.data().end());
    cross_v_.emplace_back(v.data().begin(), v.data().end());
  }
}

std::vector<double> ModelScorer::start() {
  const int layers = model_.config().layers;
  self_k_.assign(layers, {});
  self_v_.assign(layers, {});
  row_sentence_.resize(batch_);
  for (int s = 0; s < batch_; ++s) row_sentence_[s] = s;
  t_ = 0;
  const std::vector<int> bos(batch_, kBos);
  return step(bos);
}

std::vector<double> ModelScorer::advance(std::span<const int> parents, std::span<const int> tokens) {
  if (parents.size() != tokens.size()) throw ShapeError("advance: parents and tokens differ in length");
  const std::size_t d = model_.config().d_model;
  const std::size_t old_rows = row_sentence_.size();
  const std::size_t per_row = static_cast<std::size_t>(t_) * d;
  for (auto* caches : {&self_k_, &self_v_}) {
    for (auto& cache : *caches) {
      std::vector<double> next(parents.size() * per_row);
      for (std::size_t r = 0; r < parents.size(); ++r) {
        const auto p = static_cast<std::size_t>(parents[r]);
        if (p >= old_rows) throw ShapeError("advance: parent row out of range");
        std::copy_n(cache.begin() + static_cast<std::ptrdiff_t>(p * per_row), per_row,
                    next.begin() + static_cast<std::ptrdiff_t>(r * per_row));
      }
      cache = std::move(next);
    }
  }
  std::vector<int> sentence(parents.size());
  for (std::size_t r = 0; r < parents.size(); ++r) sentence[r] = row_sentence_[parents[r]];
  row_sentence_ = std::move(sentence);
  return step(tokens);
}

std::vector<double> ModelScorer::step(std::span<const int> tokens) {
  NoGradGuard guard;
  const auto& cfg = model_.config();
  const int R = static_cast<int>(tokens.size());
  const std::size_t d = cfg.d_model;
  const int S = src_len_;

  // Cross-attention memory and mask gathered to rows.
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(R) * S);
  for (int r = 0; r < R; ++r) {
    std::copy_n(src_valid_.begin() + static_cast<std::ptrdiff_t>(row_sentence_[r]) * S, S,
                valid.begin() + static_cast<std::ptrdiff_t>(r) * S);
  }
  auto gather_memory = [&](const std::vector<double>& m) {
    std::vector<double> out(static_cast<std::size_t>(R) * S * d);
    const std::size_t block = static_cast<std::size_t>(S) * d;
    for (int r = 0; r < R; ++r) {
      std::copy_n(m.begin() + static_cast<std::ptrdiff_t>(row_sentence_[r] * block), block,
                  out.begin() + static_cast<std::ptrdiff_t>(r * block));
    }
    return Tensor::from({static_cast<std::int64_t>(R) * S, static_cast<std::int64_t>(d)}, std::move(out));
  };
  std::vector<Tensor> cross_k(cross_k_.size()), cross_v(cross_v_.size());

  const std::vector<int> pos(R, t_);
  Tensor x = model_.embed_target(tokens, pos);
  const int kv_len = t_ + 1;
  for (int i = 0; i < cfg.layers; ++i) {
    const int u = model_.unique_index(i);
    const auto& l = model_.decoder_layers()[u];
    if (!cross_k[u].defined()) {
      cross_k[u] = gather_memory(cross_k_[u]);
      cross_v[u] = gather_memory(cross_v_[u]);
    }

    auto self_attention = [&](const Tensor& in) {
      const Tensor q = linear(in, l.self_attn.q_w, l.self_attn.q_b);
      const Tensor k = linear(in, l.self_attn.k_w, l.self_attn.k_b);
      const Tensor v = linear(in, l.self_attn.v_w, l.self_attn.v_b);
      for (auto [cache, fresh] : {std::pair{&self_k_[i], &k}, std::pair{&self_v_[i], &v}}) {
        std::vector<double> grown(static_cast<std::size_t>(R) * kv_len * d);
        const std::size_t old_block = static_cast<std::size_t>(t_) * d;
        for (int r = 0; r < R; ++r) {
          auto dst = grown.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(r) * kv_len * d);
          std::copy_n(cache->begin() + static_cast<std::ptrdiff_t>(r * old_block), old_block, dst);
          std::copy_n(fresh->data().begin() + static_cast<std::ptrdiff_t>(r * d), d,
                      dst + static_cast<std::ptrdiff_t>(old_block));
        }
        *cache = std::move(grown);
      }
      const Shape kv_shape{static_cast<std::int64_t>(R) * kv_len, static_cast<std::int64_t>(d)};
      const Tensor K = Tensor::from(kv_shape, self_k_[i]);
      const Tensor V = Tensor::from(kv_shape, self_v_[i]);
      const Tensor a = attention(q, K, V, {R, cfg.heads, 1, kv_len}, {}, false);
      return linear(a, l.self_attn.out_w, l.self_attn.out_b);
    };
    auto cross_attention = [&](const Tensor& in) {
      const Tensor q = linear(in, l.cross_attn.q_w, l.cross_attn.q_b);
      const Tensor a = attention(q, cross_k[u], cross_v[u], {R, cfg.heads, 1, S}, valid, false);
      return linear(a, l.cross_attn.out_w, l.cross_attn.out_b);
    };
    auto ffn = [&](const Tensor& in) { return model_.ffn(in, l.fc1_w, l.fc1_b, l.fc2_w, l.fc2_b); };

    Tensor h;
    if (cfg.pre_norm) {
      h = add(x, self_attention(model_.apply_norm(l.self_attn_norm, x)));
      h = add(h, cross_attention(model_.apply_norm(l.cross_attn_norm, h)));
      h = add(h, ffn(model_.apply_norm(l.final_norm, h)));
    } else {
      h = model_.apply_norm(l.self_attn_norm, add(x, self_attention(x)));
      h = model_.apply_norm(l.cross_attn_norm, add(h, cross_attention(h)));
      h = model_.apply_norm(l.final_norm, add(h, ffn(h)));
    }
    x = model_.apply_adapter(false, i, h);
  }
  ++t_;
  const Tensor logits = model_.output_logits(x);
  return log_softmax_rows(logits.data(), logits.cols());
}

std::vector<Hypothesis> decode_batch(const Model& model, const std::vector<std::vector<int>>& sources,
                                     std::span<const int> max_len, const BeamOptions& options) {
  if (sources.empty()) return {};
  ModelScorer scorer(model, sources);
  return beam_search(scorer, max_len, options);
}

Hypothesis decode_beam(const Model& model, const std::vector<int>& source, int beam, int max_len,
                       double length_penalty) {
  const std::vector<int> caps{max_len};
  BeamOptions options;
  options.beam = beam;
  options.length_penalty = length_penalty;
  return decode_batch(model, {source}, caps, options).front();
}

int default_max_len(const ModelConfig& cfg, int source_len) {
  return std::min(cfg.max_positions, 2 * source_len + 10);
}

}  // namespace distillkit::model
