#include <doctest.h>

#include <cmath>
#include <limits>

#include "../support/gradcheck.hpp"
#include "../support/selection_oracles.hpp"
#include "../support/toy.hpp"
#include "distillkit/corpus/bpe.hpp"
#include "distillkit/distill/distill_corpus.hpp"
#include "distillkit/distill/plan.hpp"
#include "distillkit/distill/selection.hpp"
#include "distillkit/distill/training.hpp"
#include "distillkit/errors.hpp"
#include "distillkit/numerics/ops.hpp"

using namespace distillkit;
using namespace distillkit::distill;
using distillkit::testing::random_batch;
using distillkit::testing::toy_config;
using numerics::NoGradGuard;
using numerics::Rng;

namespace {

std::vector<double> random_losses(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  // Coarse values make ties common.
  const bool coarse = rng.bernoulli(0.5);
  for (auto& x : v) x = coarse ? static_cast<double>(rng.uniform_int(6)) : rng.uniform(0.0, 5.0);
  return v;
}

double random_ratio(Rng& rng) {
  static const double fixed[] = {0.1, 0.25, 0.3, 0.5, 0.7, 1.0};
  return rng.bernoulli(0.5) ? fixed[rng.uniform_int(6)] : rng.uniform(0.01, 1.0);
}

DistillPlan plan_of(DistillMode mode, double r = 0.5, int capacity = 8) {
  DistillPlan p;
  p.mode = mode;
  p.hard_ratio = r;
  p.queue_capacity = capacity;
  return p;
}

}  // namespace

TEST_CASE("plan: names, defaults and validation") {
  for (auto m : {DistillMode::none, DistillMode::sld, DistillMode::wsld, DistillMode::wld, DistillMode::bl,
                 DistillMode::gl, DistillMode::glwd}) {
    CHECK(distill_mode_from_string(to_string(m)) == m);
  }
  CHECK(distill_mode_from_string("GLwD") == DistillMode::glwd);
  CHECK_THROWS_AS(distill_mode_from_string("xyz"), ConfigError);
  DistillPlan p;
  CHECK(p.kd_weight == 0.5);
  CHECK(p.hard_ratio == 0.5);
  CHECK(p.temperature == 1.0);
  CHECK(p.language_capacity(4) == p.queue_capacity / 4);
  p.hard_ratio = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p.hard_ratio = 0.5;
  p.kd_weight = 1.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = plan_of(DistillMode::gl, 0.5, 0);
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = plan_of(DistillMode::glwd, 0.3, 12);
  p.language_queue_capacity = 5;
  CHECK(plan_from_json(plan_to_json(p)) == p);
  CHECK(plan_of(DistillMode::bl).needs_teacher());
  CHECK_FALSE(plan_of(DistillMode::sld).needs_teacher());
  CHECK_FALSE(plan_of(DistillMode::wld).uses_distilled_targets());
}

TEST_CASE("queue: FIFO eviction matches a vector oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int cap = 1 + static_cast<int>(rng.uniform_int(10));
    SelectionQueue q(cap);
    testing::OracleQueue o{static_cast<std::size_t>(cap), {}};
    for (int i = 0; i < 40; ++i) {
      const double v = rng.uniform();
      q.push(v);
      o.push(v);
      REQUIRE(q.size() <= static_cast<std::size_t>(cap));
      REQUIRE(std::vector<double>(q.losses().begin(), q.losses().end()) == o.items);
    }
  }
  CHECK_THROWS_AS(SelectionQueue(0), ConfigError);
  CHECK_THROWS_AS(SelectionQueue(3).quantile(0.5), PreconditionError);
}

TEST_CASE("batch selection examples") {
  CHECK(select_hard_batch(std::vector<double>{0.5, 2.0, 1.0, 3.0}, 0.5) == std::vector<int>{1, 3});
  CHECK(select_hard_batch(std::vector<double>{0.5, 2.0, 1.0}, 1.0) == std::vector<int>{0, 1, 2});
  CHECK(select_hard_batch(std::vector<double>{1, 1, 1, 1}, 0.25) == std::vector<int>{0});
  CHECK(select_hard_batch(std::vector<double>{}, 0.5).empty());
  CHECK_THROWS_AS(select_hard_batch(std::vector<double>{1.0}, 0.0), ConfigError);
}

TEST_CASE("batch selection matches the sort oracle with cardinality ceil(rB)") {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto losses = random_losses(rng, 1 + rng.uniform_int(12));
    const double r = random_ratio(rng);
    const auto got = select_hard_batch(losses, r);
    REQUIRE(got == testing::oracle_batch(losses, r));
    REQUIRE(static_cast<int>(got.size()) == static_cast<int>(std::ceil(r * losses.size() - 1e-9)));
  }
}

TEST_CASE("global selection examples") {
  SelectionQueue q(10);
  for (int i = 1; i <= 10; ++i) q.push(i);
  CHECK(q.quantile(0.7) == 7.0);
  CHECK(select_hard_global(q, std::vector<double>{2, 8, 10}, 0.3) == std::vector<int>{1, 2});
  CHECK(std::vector<double>(q.losses().begin(), q.losses().end()) ==
        std::vector<double>{4, 5, 6, 7, 8, 9, 10, 2, 8, 10});

  SelectionQueue empty(5);
  CHECK(select_hard_global(empty, std::vector<double>{9, 9}, 0.5).empty());
  CHECK(empty.size() == 2);

  // Tiny r: only losses above the maximum.
  SelectionQueue q2(4);
  for (double v : {1.0, 4.0, 2.0, 3.0}) q2.push(v);
  CHECK(select_hard_global(q2, std::vector<double>{4.0, 4.5, 3.9}, 1e-6) == std::vector<int>{1});

  // Capacity 1: selected iff above the single stored previous loss.
  SelectionQueue one(1);
  CHECK(select_hard_global(one, std::vector<double>{2.0}, 0.5).empty());
  CHECK(select_hard_global(one, std::vector<double>{3.0}, 0.5) == std::vector<int>{0});
  CHECK(select_hard_global(one, std::vector<double>{3.0}, 0.5).empty());
  CHECK(select_hard_global(one, std::vector<double>{1.0}, 0.5).empty());
}

TEST_CASE("global selection matches the quantile and FIFO oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const int cap = 1 + static_cast<int>(rng.uniform_int(12));
    SelectionQueue q(cap);
    testing::OracleQueue o{static_cast<std::size_t>(cap), {}};
    const int batches = 1 + static_cast<int>(rng.uniform_int(5));
    const double r = random_ratio(rng);
    for (int b = 0; b < batches; ++b) {
      const auto losses = random_losses(rng, 1 + rng.uniform_int(6));
      REQUIRE(select_hard_global(q, losses, r) == testing::oracle_global(o, losses, r));
      REQUIRE(std::vector<double>(q.losses().begin(), q.losses().end()) == o.items);
    }
  }
}

TEST_CASE("language-wise selection matches the per-language oracle") {
  Rng rng(4);
  const std::vector<std::string> langs{"as", "bn", "hi"};
  for (int trial = 0; trial < 1000; ++trial) {
    const int cap = 1 + static_cast<int>(rng.uniform_int(8));
    const double r = random_ratio(rng);
    std::map<std::string, SelectionQueue> queues;
    std::map<std::string, testing::OracleQueue> oracle;
    for (int b = 0; b < 4; ++b) {
      const auto n = 1 + rng.uniform_int(8);
      const auto losses = random_losses(rng, n);
      std::vector<std::string> ls;
      for (std::size_t i = 0; i < n; ++i) ls.push_back(langs[rng.uniform_int(langs.size())]);
      REQUIRE(select_hard_language_wise(queues, ls, losses, r, cap) ==
              testing::oracle_language_wise(oracle, ls, losses, r, static_cast<std::size_t>(cap)));
      for (const auto& [l, q] : queues) {
        REQUIRE(std::vector<double>(q.losses().begin(), q.losses().end()) == oracle[l].items);
        REQUIRE(q.language() == l);
      }
    }
  }
}

TEST_CASE("language-wise selection reduces to global selection for one language") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    SelectionQueue g(6);
    std::map<std::string, SelectionQueue> queues;
    const double r = random_ratio(rng);
    for (int b = 0; b < 4; ++b) {
      const auto losses = random_losses(rng, 1 + rng.uniform_int(6));
      const std::vector<std::string> ls(losses.size(), "as");
      REQUIRE(select_hard_language_wise(queues, ls, losses, r, 6) == select_hard_global(g, losses, r));
    }
  }
}

TEST_CASE("language-wise selection for one language ignores other languages") {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    std::map<std::string, SelectionQueue> qa, qb;
    const double r = random_ratio(rng);
    for (int b = 0; b < 4; ++b) {
      const auto n = 2 + rng.uniform_int(8);
      auto losses = random_losses(rng, n);
      std::vector<std::string> ls;
      for (std::size_t i = 0; i < n; ++i) ls.push_back(rng.bernoulli(0.5) ? "as" : "hi");
      auto perturbed = losses;
      for (std::size_t i = 0; i < n; ++i)
        if (ls[i] == "hi") perturbed[i] = rng.uniform(0.0, 100.0);
      const auto a = select_hard_language_wise(qa, ls, losses, r, 5);
      const auto b2 = select_hard_language_wise(qb, ls, perturbed, r, 5);
      std::vector<int> a_as, b_as;
      for (int i : a)
        if (ls[i] == "as") a_as.push_back(i);
      for (int i : b2)
        if (ls[i] == "as") b_as.push_back(i);
      REQUIRE(a_as == b_as);
    }
  }
}

TEST_CASE("unseen language gets an empty queue and only it warms up") {
  std::map<std::string, SelectionQueue> queues;
  queues.emplace("as", SelectionQueue(4, "as"));
  for (double v : {1.0, 2.0, 3.0, 4.0}) queues.at("as").push(v);
  const std::vector<std::string> ls{"as", "xx", "as"};
  const auto sel = select_hard_language_wise(queues, ls, std::vector<double>{3.5, 100.0, 0.5}, 0.5, 7);
  CHECK(sel == std::vector<int>{0});
  CHECK(queues.at("xx").capacity() == 7);
  CHECK(queues.at("xx").size() == 1);
}

TEST_CASE("selection is scale-equivariant") {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const double c = std::pow(2.0, static_cast<double>(rng.uniform_int(9)) - 4.0) * (rng.bernoulli(0.5) ? 1.0 : 3.0);
    const double r = random_ratio(rng);
    SelectionQueue q1(5), q2(5);
    std::map<std::string, SelectionQueue> m1, m2;
    for (int b = 0; b < 4; ++b) {
      const auto losses = random_losses(rng, 1 + rng.uniform_int(7));
      std::vector<double> scaled;
      std::vector<std::string> ls;
      for (double l : losses) scaled.push_back(l * c), ls.push_back(rng.bernoulli(0.5) ? "as" : "hi");
      REQUIRE(select_hard_batch(losses, r) == select_hard_batch(scaled, r));
      REQUIRE(select_hard_global(q1, losses, r) == select_hard_global(q2, scaled, r));
      REQUIRE(select_hard_language_wise(m1, ls, losses, r, 5) == select_hard_language_wise(m2, ls, scaled, r, 5));
    }
  }
}

TEST_CASE("skewed languages: per-language queues still select the low-loss language") {
  // "hi" dominates the batches and its losses are about ten times those of "as".
  Rng rng(8);
  const double r = 0.5;
  SelectionQueue global(64);
  std::map<std::string, SelectionQueue> per_lang;
  const int per_lang_cap = 32;
  for (int b = 0; b < 12; ++b) {
    std::vector<double> losses;
    std::vector<std::string> ls;
    for (int i = 0; i < 14; ++i) losses.push_back(10.0 * rng.uniform(1.0, 2.0)), ls.push_back("hi");
    // Each batch holds one easy and one hard "as" sample.
    const double u = rng.uniform(1.0, 1.5);
    for (double v : {u, u + 1.0}) losses.push_back(v), ls.push_back("as");
    const auto g = select_hard_global(global, losses, r);
    const auto w = select_hard_language_wise(per_lang, ls, losses, r, per_lang_cap);
    if (b < 2) continue;  // warm-up
    int g_as = 0, w_as = 0;
    for (int i : g) g_as += ls[i] == "as";
    for (int i : w) w_as += ls[i] == "as";
    CHECK(g_as == 0);
    CHECK(w_as >= 1);
  }
  // With the queue holding exactly this batch's losses, r * n of them exceed
  // the threshold when the values are distinct and r * n is whole.
  std::map<std::string, SelectionQueue> exact;
  exact.emplace("as", SelectionQueue(4, "as"));
  for (double v : {0.1, 0.4, 0.2, 0.3}) exact.at("as").push(v);
  const std::vector<std::string> ls(4, "as");
  CHECK(select_hard_language_wise(exact, ls, std::vector<double>{0.3, 0.1, 0.4, 0.2}, 0.5, 4).size() == 2);
}

TEST_CASE("wsld_loss identities") {
  Rng rng(9);
  const std::vector<int> targets{3, 1, 0, 2};
  auto s = testing::random_tensor({4, 5}, rng);
  auto t = testing::random_tensor({4, 5}, rng, 1.0, false);
  const auto ce = numerics::label_smoothed_ce(s, targets, 0.1, 0);
  CHECK(wsld_loss(s, t, targets, 0.0, 0.1).item() == ce.item());
  CHECK(wsld_loss(s, s.detach(), targets, 1.0, 0.1).item() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK_THROWS_AS(wsld_loss(s, testing::random_tensor({4, 6}, rng), targets, 0.5, 0.1), ShapeError);

  // One token, V = 2, no smoothing: student logits (0, 0), teacher (log 3, 0), target 1.
  auto s1 = numerics::Tensor::from({1, 2}, {0.0, 0.0});
  auto t1 = numerics::Tensor::from({1, 2}, {std::log(3.0), 0.0});
  const double ce1 = std::log(2.0);
  const double kl1 = 0.75 * std::log(0.75 / 0.5) + 0.25 * std::log(0.25 / 0.5);
  CHECK(wsld_loss(s1, t1, std::vector<int>{1}, 0.5, 0.0).item() == doctest::Approx(0.5 * ce1 + 0.5 * kl1).epsilon(1e-14));
}

TEST_CASE("distill_loss: mode relations") {
  auto cfg = toy_config();
  model::Model student(cfg, 1), teacher(cfg, 2);
  Rng rng(10);
  const auto batch = random_batch(rng, cfg, 4, {"as", "hi", "as", "hi"});
  auto state = make_train_state(plan_of(DistillMode::gl), {"as", "hi"});

  const auto none = distill_loss(student, nullptr, batch, plan_of(DistillMode::none), state, 0.1);
  const auto sld = distill_loss(student, nullptr, batch, plan_of(DistillMode::sld), state, 0.1);
  CHECK(none.loss.item() == sld.loss.item());

  const auto wsld = distill_loss(student, &teacher, batch, plan_of(DistillMode::wsld), state, 0.1);
  const auto bl1 = distill_loss(student, &teacher, batch, plan_of(DistillMode::bl, 1.0), state, 0.1);
  CHECK(bl1.selected.size() == 4);
  CHECK(bl1.loss.item() == doctest::Approx(wsld.loss.item()).epsilon(1e-12));

  auto wld_plan = plan_of(DistillMode::wld);
  const auto wld = distill_loss(student, &teacher, batch, wld_plan, state, 0.1);
  CHECK(wld.loss.item() == doctest::Approx(wsld.kd.value()).epsilon(1e-12));

  // Selected sentences are the BL choice on per-sample NLL.
  const auto bl = distill_loss(student, &teacher, batch, plan_of(DistillMode::bl, 0.5), state, 0.1);
  CHECK(bl.selected == select_hard_batch(bl.sample_losses, 0.5));
  CHECK(bl.selected.size() == 2);

  // GL warm-up: first batch selects nothing and the loss is the weighted CE.
  auto gl_state = make_train_state(plan_of(DistillMode::gl), {});
  const auto gl = distill_loss(student, &teacher, batch, plan_of(DistillMode::gl), gl_state, 0.1);
  CHECK(gl.selected.empty());
  CHECK(gl.loss.item() == doctest::Approx(0.5 * sld.loss.item()).epsilon(1e-12));
  CHECK(gl_state.global_queue.size() == 4);

  auto lw_state = make_train_state(plan_of(DistillMode::glwd), {"as", "hi"});
  distill_loss(student, &teacher, batch, plan_of(DistillMode::glwd), lw_state, 0.1);
  CHECK(lw_state.language_queues.at("as").size() == 2);
  CHECK(lw_state.language_queues.at("hi").size() == 2);
  CHECK(lw_state.language_queues.at("as").capacity() == 4);
}

TEST_CASE("distill_loss preconditions") {
  auto cfg = toy_config();
  model::Model student(cfg, 1), teacher(cfg, 2);
  Rng rng(11);
  const auto batch = random_batch(rng, cfg, 2);
  TrainState state;
  CHECK_THROWS_AS(distill_loss(student, nullptr, batch, plan_of(DistillMode::wsld), state, 0.1), PreconditionError);
  teacher.set_training(true, 0.1);
  CHECK_THROWS_AS(distill_loss(student, &teacher, batch, plan_of(DistillMode::bl), state, 0.1), PreconditionError);
  teacher.set_training(false);
  CHECK_THROWS_AS(distill_loss(student, &teacher, batch, plan_of(DistillMode::glwd), state, 0.1), PreconditionError);
  model::Model other(toy_config(2, 2, 9), 3);
  CHECK_THROWS_AS(distill_loss(student, &other, batch, plan_of(DistillMode::wsld), state, 0.1), ShapeError);
}

TEST_CASE("every plan's loss passes gradient checks; the teacher gets no gradient") {
  auto cfg = toy_config(2, 1);
  model::Model student(cfg, 5), teacher(cfg, 6);
  Rng rng(12);
  const auto batch = random_batch(rng, cfg, 3, {"as", "hi", "as"});
  std::vector<std::pair<std::string, numerics::Tensor>> params;
  for (const auto& p : student.parameters()) params.emplace_back(p.name, p.tensor);
  for (auto mode : {DistillMode::none, DistillMode::sld, DistillMode::wsld, DistillMode::wld, DistillMode::bl,
                    DistillMode::gl, DistillMode::glwd}) {
    auto plan = plan_of(mode, 0.5, 6);
    TrainState warm = make_train_state(plan, {"as", "hi"});
    // Warm queues so the selective KL term is active.
    {
      NoGradGuard guard;
      Rng r2(13);
      distill_loss(student, &teacher, random_batch(r2, cfg, 3, {"as", "hi", "as"}), plan, warm, 0.1);
    }
    auto loss = [&] {
      TrainState s = warm;
      return distill_loss(student, &teacher, batch, plan, s, 0.1).loss;
    };
    const auto report = testing::grad_check(loss, params, 1e-4, 5);
    CHECK_MESSAGE(report.max_rel_error < 1e-4, to_string(mode), " ", report.worst);
    for (const auto& p : teacher.parameters()) REQUIRE_FALSE(p.tensor.has_grad());
  }
}

TEST_CASE("training_step updates trainable parameters and detects divergence") {
  auto cfg = toy_config();
  model::Model student(cfg, 1), teacher(cfg, 2);
  Rng rng(14);
  const auto batch = random_batch(rng, cfg, 4, {"as", "hi", "as", "hi"});
  auto plan = plan_of(DistillMode::glwd, 0.5, 8);
  auto state = make_train_state(plan, {"as", "hi"});
  numerics::OptimizerConfig opt;
  opt.warmup_steps = 10;
  const auto teacher_before = teacher.snapshot();
  const auto before = student.snapshot();
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 30; ++i) {
    const auto r = training_step(student, &teacher, batch, plan, state, opt);
    CHECK(std::isfinite(r.loss));
    if (i == 0) first = r.loss;
    last = r.loss;
  }
  CHECK(state.step == 30);
  CHECK(last < first);
  CHECK(student.snapshot() != before);
  CHECK(teacher.snapshot() == teacher_before);

  const auto json = train_state_to_json(state);
  TrainState restored;
  train_state_from_json(json, restored);
  CHECK(restored.step == state.step);
  CHECK(restored.language_queues == state.language_queues);

  auto w = student.parameter("decoder.output_projection.bias");
  w.data()[0] = std::numeric_limits<double>::quiet_NaN();
  const auto snap = student.snapshot();
  CHECK_THROWS_AS(training_step(student, &teacher, batch, plan, state, opt), DivergenceError);
  CHECK(state.step == 30);
}

TEST_CASE("distill_corpus equals exhaustive-search optima and drops failures") {
  // Target alphabet {▁, a}: with a length cap of 3, beam 5 covers every prefix.
  const auto tvocab = corpus::Vocab::train({{"a"}, {"a", "a"}}, 6);
  const auto svocab = corpus::Vocab::train({{"x", "y"}, {"y"}}, 8);
  REQUIRE(tvocab.size() == 6);
  corpus::VocabPair vocabs{svocab, tvocab};
  auto cfg = toy_config(2, 2, tvocab.size());
  cfg.vocab_src = svocab.size();
  model::Model teacher(cfg, 31);
  corpus::Corpus c;
  c.push_back({"as", {"x", "y"}, {"q"}, 0.5, corpus::Provenance::original});
  c.push_back({"hi", {"y"}, {"q"}, 0.7, corpus::Provenance::original});
  c.push_back({"as", {"y", "x", "y"}, {"q"}, 0.1, corpus::Provenance::original});
  DistillOptions opts;
  opts.max_len = 3;
  opts.batch_size = 2;
  const auto out = distill_corpus(teacher, c, vocabs, opts);
  std::size_t k = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto best = testing::exhaustive_oracle(teacher, svocab.encode(c[i].source), 3);
    const auto words = tvocab.decode(std::span<const int>(best.tokens.data(), best.tokens.size() - 1));
    if (words.empty()) {
      CHECK(std::find(out.dropped.begin(), out.dropped.end(), i) != out.dropped.end());
      continue;
    }
    REQUIRE(k < out.corpus.size());
    CHECK(out.corpus[k].target == words);
    CHECK(out.corpus[k].source == c[i].source);
    CHECK(out.corpus[k].language == c[i].language);
    CHECK(out.corpus[k].provenance == corpus::Provenance::distilled);
    CHECK_FALSE(out.corpus[k].similarity.has_value());
    ++k;
  }
  CHECK(k == out.corpus.size());
  CHECK(out.corpus.size() + out.dropped.size() == c.size());

  // A teacher that never emits eos fails on every pair.
  auto bias = teacher.parameter("decoder.output_projection.bias");
  bias.data()[2] = -std::numeric_limits<double>::infinity();
  const auto failed = distill_corpus(teacher, c, vocabs, opts);
  CHECK(failed.corpus.empty());
  CHECK(failed.dropped == std::vector<std::size_t>{0, 1, 2});
}
