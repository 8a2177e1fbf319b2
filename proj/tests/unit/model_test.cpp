#include <doctest.h>

#include <cmath>
#include <map>

#include "../support/gradcheck.hpp"
#include "../support/toy.hpp"
#include "distillkit/errors.hpp"
#include "distillkit/model/checkpoint.hpp"
#include "distillkit/model/config.hpp"
#include "distillkit/model/decode.hpp"
#include "distillkit/numerics/ops.hpp"

using namespace distillkit;
using namespace distillkit::model;
using distillkit::testing::random_batch;
using distillkit::testing::toy_config;
using numerics::NoGradGuard;
using numerics::Rng;
using numerics::Tensor;

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("count_params reproduces the architecture table within 2%") {
  const std::map<std::string, double> expected = {{"base", 95.4e6},  {"base12L", 139.5e6}, {"base18L", 183.7e6},
                                                  {"base24L", 227.8e6}, {"big", 278.9e6},   {"huge_RS", 207.3e6},
                                                  {"huge", 474.9e6}};
  for (const auto& cfg : full_scale_configs()) {
    const double got = static_cast<double>(count_params(cfg));
    CHECK_MESSAGE(std::abs(got - expected.at(cfg.name)) / expected.at(cfg.name) < 0.02, cfg.name);
  }
}

TEST_CASE("count_params differences equal whole layer blocks") {
  const auto base = full_scale_config("base");
  const auto base12 = full_scale_config("base12L");
  CHECK(encoder_layer_params(base) == 3'152'384);
  CHECK(decoder_layer_params(base) == 4'204'032);
  CHECK(count_params(base12) - count_params(base) == 6 * (encoder_layer_params(base) + decoder_layer_params(base)));
  const auto huge = full_scale_config("huge");
  const auto rs = full_scale_config("huge_RS");
  CHECK(count_params(huge) - count_params(rs) == 5 * (encoder_layer_params(huge) + decoder_layer_params(huge)));
  // Depth grows the count linearly.
  CHECK(count_params(full_scale_config("base24L")) - count_params(full_scale_config("base18L")) ==
        count_params(full_scale_config("base18L")) - count_params(base12));
}

TEST_CASE("count_params deltas follow the table's width and depth deltas") {
  auto p = [](const char* n) { return static_cast<double>(count_params(full_scale_config(n))); };
  // Depth: each +6 layers adds 44.1M in the table (139.5 - 95.4).
  CHECK(std::abs((p("base12L") - p("base")) - 44.1e6) / 44.1e6 < 0.02);
  CHECK(std::abs((p("base24L") - p("base")) - 132.4e6) / 132.4e6 < 0.02);
  // Width: base -> big -> huge (183.5M and 196.0M in the table).
  CHECK(std::abs((p("big") - p("base")) - 183.5e6) / 183.5e6 < 0.02);
  CHECK(std::abs((p("huge") - p("big")) - 196.0e6) / 196.0e6 < 0.02);
}

TEST_CASE("count_params matches the realized parameter registry") {
  std::vector<ModelConfig> cfgs = {toy_config(), toy_config(6, 1), toy_config(4, 2)};
  auto post = toy_config();
  post.pre_norm = false;
  post.embed_layernorm = false;
  cfgs.push_back(post);
  for (const auto& cfg : cfgs) {
    const Model m(cfg, 1);
    CHECK(m.parameter_count() == count_params(cfg));
  }
}

TEST_CASE("invalid model configs are rejected") {
  auto c = toy_config();
  c.heads = 3;
  CHECK_THROWS_AS(Model(c, 0), ConfigError);
  c = toy_config(6, 4);
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = toy_config();
  c.vocab_tgt = 3;
  CHECK_THROWS_AS(count_params(c), ConfigError);
}

TEST_CASE("same seed gives identical initial parameters") {
  const Model a(toy_config(), 42), b(toy_config(), 42), c(toy_config(), 43);
  CHECK(a.snapshot() == b.snapshot());
  CHECK(a.snapshot() != c.snapshot());
}

TEST_CASE("attention preserves shape with per-head width d_model / heads") {
  auto cfg = toy_config();
  CHECK(cfg.d_model / cfg.heads == 4);
  const Model m(cfg, 3);
  Rng rng(1);
  const auto batch = random_batch(rng, cfg, 3);
  NoGradGuard g;
  const auto enc = m.encode(batch.src, batch.size, batch.src_len);
  CHECK(enc.memory.shape() == numerics::Shape{batch.size * batch.src_len, 16});
  const auto logits = m.decode(enc, batch.tgt_in, batch.tgt_len);
  CHECK(logits.shape() == numerics::Shape{batch.size * batch.tgt_len, cfg.vocab_tgt});
}

TEST_CASE("recurrent stacking equals repeated application of the single layer") {
  const auto cfg = toy_config(6, 1);
  const Model m(cfg, 5);
  CHECK(m.encoder_layers().size() == 1);
  CHECK(m.decoder_layers().size() == 1);
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const auto batch = random_batch(rng, cfg, 4);
    NoGradGuard g;
    const auto enc = m.encode(batch.src, batch.size, batch.src_len);
    Tensor x = m.embed_source(batch.src, batch.size, batch.src_len);
    for (int i = 0; i < 6; ++i) x = m.encoder_layer(0, x, enc.valid, batch.size, batch.src_len);
    x = m.encoder_final(x);
    CHECK(max_abs_diff(x.data(), enc.memory.data()) < 1e-9);
  }
}

TEST_CASE("the language tag changes only the first source position's embedding") {
  const auto cfg = toy_config();
  const Model m(cfg, 5);
  const std::vector<int> a = {4, 7, 8, 9, 2, 0}, b = {5, 7, 8, 9, 2, 0};
  NoGradGuard g;
  const auto ea = m.embed_source(a, 1, 6), eb = m.embed_source(b, 1, 6);
  for (int pos = 0; pos < 6; ++pos) {
    const double diff = max_abs_diff(ea.data().subspan(pos * 16, 16), eb.data().subspan(pos * 16, 16));
    if (pos == 0) {
      CHECK(diff > 0.0);
    } else {
      CHECK(diff == 0.0);
    }
  }
}

TEST_CASE("incremental decoding matches the full forward") {
  for (auto cfg : {toy_config(), toy_config(3, 1)}) {
    for (bool pre : {true, false}) {
      cfg.pre_norm = pre;
      const Model m(cfg, 9);
      Rng rng(4);
      const auto sources = distillkit::testing::random_sources(rng, 3, cfg.vocab_src, 2, 6);
      ModelScorer scorer(m, sources);
      auto lp = scorer.start();
      // Rows: two continuations of sentence 0, one of sentence 2, one of sentence 1.
      std::vector<std::vector<int>> prefixes = {{}, {}, {}};
      std::vector<int> sentence = {0, 1, 2};
      const std::vector<std::vector<int>> parent_steps = {{0, 0, 2, 1}, {0, 1, 2, 3}, {3, 2, 1, 0}};
      for (const auto& parents : parent_steps) {
        std::vector<int> tokens;
        std::vector<std::vector<int>> next_prefixes;
        std::vector<int> next_sentence;
        for (std::size_t r = 0; r < parents.size(); ++r) {
          tokens.push_back(3 + static_cast<int>(rng.uniform_int(cfg.vocab_tgt - 3)));
          next_prefixes.push_back(prefixes[parents[r]]);
          next_prefixes.back().push_back(tokens.back());
          next_sentence.push_back(sentence[parents[r]]);
        }
        lp = scorer.advance(parents, tokens);
        prefixes = next_prefixes;
        sentence = next_sentence;
        for (std::size_t r = 0; r < parents.size(); ++r) {
          const auto full = distillkit::testing::full_next_log_probs(m, sources[sentence[r]], prefixes[r]);
          CHECK(max_abs_diff(full, std::span<const double>(lp).subspan(r * cfg.vocab_tgt, cfg.vocab_tgt)) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("beam 1 equals greedy decoding") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const Model m(toy_config(2, 2, 9), seed);
    Rng rng(seed + 100);
    const auto sources = distillkit::testing::random_sources(rng, 6, 13, 1, 6);
    const std::vector<int> caps(sources.size(), 7);
    BeamOptions opt;
    opt.beam = 1;
    const auto hyps = decode_batch(m, sources, caps, opt);
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const auto ref = distillkit::testing::greedy_oracle(m, sources[i], 7);
      CHECK(hyps[i].tokens == ref.tokens);
      CHECK(hyps[i].score == doctest::Approx(ref.score).epsilon(1e-9));
      CHECK(hyps[i].complete);
    }
  }
}

TEST_CASE("beam as wide as the vocabulary is exhaustive for short outputs") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Model m(toy_config(2, 2, 5), seed);
    Rng rng(seed + 7);
    const auto sources = distillkit::testing::random_sources(rng, 3, 13, 1, 5);
    const std::vector<int> caps(sources.size(), 3);
    BeamOptions opt;
    opt.beam = 5;
    opt.anchor_greedy = false;
    const auto hyps = decode_batch(m, sources, caps, opt);
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const auto ref = distillkit::testing::exhaustive_oracle(m, sources[i], 3);
      CHECK(hyps[i].tokens == ref.tokens);
      CHECK(hyps[i].score == doctest::Approx(ref.score).epsilon(1e-9));
    }
  }
}

TEST_CASE("beam search never scores below greedy") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Model m(toy_config(2, 2, 12), seed);
    Rng rng(seed);
    const auto sources = distillkit::testing::random_sources(rng, 8, 13, 1, 6);
    const std::vector<int> caps(sources.size(), 9);
    const auto beam = decode_batch(m, sources, caps, BeamOptions{});
    BeamOptions g;
    g.beam = 1;
    const auto greedy = decode_batch(m, sources, caps, g);
    for (std::size_t i = 0; i < sources.size(); ++i) CHECK(beam[i].score >= greedy[i].score);
  }
  CHECK(BeamOptions{}.beam == 5);
}

namespace {

// Fixed log-probabilities independent of the prefix.
class TableScorer : public IncrementalScorer {
 public:
  explicit TableScorer(std::vector<double> row) : row_(std::move(row)) {}
  int vocab_size() const override { return static_cast<int>(row_.size()); }
  int sentences() const override { return 1; }
  std::vector<double> start() override { return row_; }
  std::vector<double> advance(std::span<const int> parents, std::span<const int>) override {
    std::vector<double> out;
    for (std::size_t i = 0; i < parents.size(); ++i) out.insert(out.end(), row_.begin(), row_.end());
    return out;
  }

 private:
  std::vector<double> row_;
};

}  // namespace

TEST_CASE("beam ties go to the lower token id") {
  const double l = std::log(0.25);
  TableScorer scorer({-INFINITY, -INFINITY, std::log(0.1), l, l, l});
  const std::vector<int> caps{3};
  BeamOptions opt;
  opt.beam = 2;
  const auto h = beam_search(scorer, caps, opt);
  // Every two-token continuation ties; the lowest ids win.
  CHECK(h[0].tokens == std::vector<int>{3, 3, 2});
}

TEST_CASE("no completion within max_len returns a flagged partial") {
  TableScorer scorer({-INFINITY, -INFINITY, -INFINITY, std::log(0.5), std::log(0.5)});
  const std::vector<int> caps{4};
  const auto h = beam_search(scorer, caps, BeamOptions{});
  CHECK_FALSE(h[0].complete);
  CHECK(h[0].tokens.size() == 3);
  CHECK(std::isfinite(h[0].score));
}

TEST_CASE("adapters start as the identity and count d*b + b + b*d + d + 2d") {
  auto cfg = toy_config(3, 1);
  Model m(cfg, 11);
  Rng rng(5);
  const auto batch = random_batch(rng, cfg, 3);
  std::vector<double> before;
  {
    NoGradGuard g;
    const auto l = m.forward(batch);
    before.assign(l.data().begin(), l.data().end());
  }
  AdapterConfig acfg{"eastern", 8, 0.1};
  m.insert_adapters(acfg, 1);
  CHECK_THROWS_AS(m.insert_adapters(acfg, 1), Error);
  CHECK(m.parameter_count(true) - m.parameter_count() == count_adapter_params(cfg, acfg));
  CHECK(adapter_params(16, 8) == 16 * 8 + 8 + 8 * 16 + 16 + 2 * 16);
  CHECK(count_adapter_params(cfg, acfg) == 2 * 3 * adapter_params(16, 8));
  m.set_active_adapter("eastern");
  {
    NoGradGuard g;
    const auto l = m.forward(batch);
    CHECK(max_abs_diff(before, l.data()) < 1e-9);
  }
  CHECK_THROWS_AS(m.set_active_adapter("nope"), Error);
}

TEST_CASE("adapter fine-tuning leaves base gradients exactly zero and routing controls use") {
  auto cfg = toy_config();
  Model m(cfg, 12);
  Rng rng(6);
  const auto batch = random_batch(rng, cfg, 4);
  std::vector<double> base_logits;
  {
    NoGradGuard g;
    const auto l = m.forward(batch);
    base_logits.assign(l.data().begin(), l.data().end());
  }
  m.insert_adapters({"aa", 4, 0.1}, 2);
  m.freeze_base();
  m.set_active_adapter("aa");
  CHECK(m.trainable_parameter_count() == count_adapter_params(cfg, {"aa", 4, 0.1}));
  m.set_training(true, 0.2);
  numerics::AdamState state;
  numerics::OptimizerConfig ocfg;
  ocfg.warmup_steps = 1;
  ocfg.base_lr = 1e-2;
  for (int step = 1; step <= 2; ++step) {
    const auto params = m.trainable_parameters();
    for (auto p : m.parameters()) p.tensor.zero_grad();
    auto loss = numerics::label_smoothed_ce(m.forward(batch), batch.tgt_out, 0.1, 0);
    loss.backward();
    for (const auto& p : m.parameters()) {
      if (p.name.starts_with("adapters.")) continue;
      bool zero = true;
      if (p.tensor.has_grad()) {
        for (double g : p.tensor.grad()) zero = zero && g == 0.0;
      }
      CHECK_MESSAGE(zero, p.name);
    }
    numerics::adam_step(params, state, ocfg, step);
  }
  m.set_training(false);
  NoGradGuard g;
  const auto adapted = m.forward(batch);
  CHECK(max_abs_diff(base_logits, adapted.data()) > 1e-6);
  m.set_active_adapter(std::nullopt);
  CHECK(max_abs_diff(base_logits, m.forward(batch).data()) == 0.0);
}

TEST_CASE("model and adapter gradients match finite differences") {
  auto cfg = toy_config(2, 1, 7);
  cfg.d_model = 8;
  cfg.d_ff = 12;
  cfg.heads = 2;
  Model m(cfg, 13);
  m.insert_adapters({"g", 3, 0.0}, 4);
  // Non-zero up-projections so every adapter weight affects the loss.
  Rng rng(9);
  for (auto p : m.parameters()) {
    if (p.name.find(".up.") != std::string::npos) {
      for (auto& x : p.tensor.data()) x = rng.uniform(-0.3, 0.3);
    }
  }
  m.set_active_adapter("g");
  const auto batch = random_batch(rng, cfg, 2);
  auto loss = [&] { return numerics::label_smoothed_ce(m.forward(batch), batch.tgt_out, 0.1, 0); };
  std::vector<std::pair<std::string, Tensor>> params;
  for (const auto& p : m.parameters()) params.emplace_back(p.name, p.tensor);
  const auto report = distillkit::testing::grad_check(loss, params, 1e-4, 6);
  CHECK_MESSAGE(report.max_rel_error < 1e-4, report.worst);
}

TEST_CASE("checkpoints round trip byte for byte") {
  auto cfg = toy_config(2, 1);
  Model m(cfg, 21);
  m.insert_adapters({"bb", 5, 0.05}, 3);
  m.freeze_base();
  numerics::AdamState state;
  state.ensure(m.parameters());
  state.moments[0].m[0] = 0.25;
  const auto bytes = serialize_checkpoint(m, &state, 17, {{"note", "x"}});
  auto loaded = deserialize_checkpoint(bytes);
  CHECK(loaded.step == 17);
  CHECK(loaded.extra["note"] == "x");
  CHECK(loaded.model.snapshot() == m.snapshot());
  CHECK(loaded.model.config() == cfg);
  CHECK(loaded.model.adapter_config("bb").adapter_dropout == 0.05);
  CHECK(loaded.model.trainable_parameter_count() == m.trainable_parameter_count());
  CHECK(serialize_checkpoint(loaded.model, &loaded.state, loaded.step, loaded.extra) == bytes);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ck.bin"), PreconditionError);
}
