#include <doctest.h>

#include <cmath>

#include "../support/metric_oracles.hpp"
#include "../support/toy.hpp"
#include "distillkit/errors.hpp"
#include "distillkit/metrics/latency.hpp"
#include "distillkit/metrics/report.hpp"
#include "distillkit/metrics/scores.hpp"

using namespace distillkit;
using namespace distillkit::metrics;
using numerics::Rng;

namespace {

Tokens split(const std::string& s) {
  Tokens out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

TEST_CASE("bleu: identical corpora score 100") {
  std::vector<Tokens> refs{split("a b c d e"), split("x y z w v u")};
  CHECK(corpus_bleu(refs, refs) == doctest::Approx(100.0));
}

TEST_CASE("bleu: short hypothesis with perfect precisions") {
  const double expected = 100.0 * std::exp(1.0 - 6.0 / 4.0);
  const double got = corpus_bleu({split("the cat sat on")}, {split("the cat sat on the mat")});
  CHECK(std::abs(got - expected) < 1e-9);
  CHECK(std::abs(got - 60.65) < 1e-2);
}

TEST_CASE("bleu: no shared 4-gram gives 0") {
  CHECK(corpus_bleu({split("a b c d")}, {split("a b c e")}) == 0.0);
  CHECK(corpus_bleu({Tokens{}}, {split("a b")}) == 0.0);
}

TEST_CASE("bleu: clipped counts and longer hypothesis") {
  // Hypothesis unigrams: the x4 clipped to 2 by the reference.
  const auto h = split("the the the the cat sat on mat");
  const auto r = split("the cat sat on the mat");
  // p1 = 6/8, p2: (the the)0 (the cat)1 (cat sat)1 (sat on)1 (on mat)0 -> 3/7,
  // p3: the cat sat, cat sat on -> 2/6, p4: the cat sat on -> 1/5; BP = 1.
  const double expected = 100.0 * std::pow((6.0 / 8) * (3.0 / 7) * (2.0 / 6) * (1.0 / 5), 0.25);
  CHECK(corpus_bleu({h}, {r}) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("bleu: corpus counts are permutation invariant") {
  std::vector<Tokens> h{split("a b c d e"), split("x y z"), split("p q r s t u")};
  std::vector<Tokens> r{split("a b c d f"), split("x y z w"), split("p q r s t u")};
  const double base = corpus_bleu(h, r);
  std::vector<Tokens> h2{h[2], h[0], h[1]}, r2{r[2], r[0], r[1]};
  CHECK(corpus_bleu(h2, r2) == base);
  CHECK(base > 0.0);
  CHECK(base < 100.0);
}

TEST_CASE("bleu: count mismatch throws") { CHECK_THROWS_AS(corpus_bleu({split("a")}, {}), Error); }

TEST_CASE("chrf: identical and disjoint") {
  CHECK(chrf_pp({"ab cd"}, {"ab cd"}) == doctest::Approx(100.0));
  CHECK(chrf_pp({"a"}, {"a"}) == doctest::Approx(100.0));
  CHECK(chrf_pp({"abc"}, {"xyz"}) == 0.0);
}

TEST_CASE("chrf: empty reference throws") {
  CHECK_THROWS_AS(chrf_pp({"a"}, {""}), Error);
  CHECK_THROWS_AS(chrf_pp({"a"}, {"   "}), Error);
  CHECK_THROWS_AS(chrf_pp({"a"}, {}), Error);
}

TEST_CASE("chrf: two-word pair against hand enumeration") {
  // hyp "ab c", ref "ab cd": chars abc vs abcd.
  // char1: 3/3, 3/4; char2: ab,bc 2/2, 2/3; char3: abc 1/1, 1/2; char4: -/1 (absent in hyp).
  // word1: ab,c vs ab,cd -> 1/2, 1/2; word2: (ab c) vs (ab cd) -> 0/1, 0/1.
  auto f = [](double p, double r) { return p + r > 0 ? 5 * p * r / (4 * p + r) : 0.0; };
  const double expected = 100.0 * (f(1, 0.75) + f(1, 2.0 / 3) + f(1, 0.5) + f(0.5, 0.5) + 0.0) / 5.0;
  CHECK(chrf_pp({"ab c"}, {"ab cd"}) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(testing::brute_force_chrf({"ab c"}, {"ab cd"}) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("chrf: matches the brute-force oracle on short strings") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(3));
    std::vector<std::string> h, r;
    for (int i = 0; i < n; ++i) {
      h.push_back(testing::random_text(rng, 10, false));
      r.push_back(testing::random_text(rng, 10, true));
    }
    CHECK(chrf_pp(h, r) == testing::brute_force_chrf(h, r));
  }
}

TEST_CASE("chrf and bleu reach 100 only on exact matches") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const auto r = testing::random_text(rng, 10, true);
    const auto h = testing::random_text(rng, 10, false);
    const bool equal_tokens = split(h) == split(r);
    if (chrf_pp({h}, {r}) >= 100.0 - 1e-12) CHECK(equal_tokens);
    if (corpus_bleu({split(h)}, {split(r)}) >= 100.0 - 1e-12) CHECK(equal_tokens);
  }
}

TEST_CASE("early_stop boundary") {
  CHECK_FALSE(early_stop({}));
  CHECK_FALSE(early_stop({1, 2, 3, 4, 5, 6, 7, 8, 9}));
  std::vector<double> h{30, 29, 29, 29, 29, 29};
  CHECK_FALSE(early_stop(h, 5));
  h.push_back(29);
  CHECK(early_stop(h, 5));
  // Ties do not count as improvement.
  CHECK(early_stop({30, 30, 30, 30, 30, 30, 30}, 5));
  CHECK_FALSE(early_stop({30, 29, 31, 29, 29, 29, 29, 29}, 5));
  // Never fires before patience + 1 evaluations.
  Rng rng(3);
  for (int p = 0; p < 8; ++p) {
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> hist;
      for (int i = 0; i <= p; ++i) {
        hist.push_back(rng.uniform());
        CHECK_FALSE(early_stop(hist, p));
      }
    }
  }
}

TEST_CASE("report: averages, round trip and table") {
  EvalReport r;
  r.model_name = "base";
  r.param_count = 12345;
  r.config_fingerprint = "abc123";
  r.per_language["as"] = {10.125, 30.5, std::nullopt, 7};
  r.per_language["hi"] = {20.0 / 3.0, 41.0, std::nullopt, 9};
  const auto avg = r.averages();
  CHECK(avg.bleu == doctest::Approx((10.125 + 20.0 / 3.0) / 2));
  CHECK(avg.n_sentences == 16);
  CHECK_FALSE(avg.latency_s.has_value());
  CHECK(parse_report(format_report(r)) == r);

  r.per_language["as"].latency_s = 0.1;
  r.per_language["hi"].latency_s = 0.3;
  CHECK(r.averages().latency_s.value() == doctest::Approx(0.2));
  CHECK(parse_report(format_report(r)) == r);

  const auto table = format_table(r);
  CHECK(table.find("Avg") != std::string::npos);
  CHECK(table.find("chrF++") != std::string::npos);

  auto j = report_to_json(r);
  j["averages"]["bleu"] = 99.0;
  CHECK_THROWS_AS(report_from_json(j), Error);
  r.per_language["as"].bleu = 101.0;
  CHECK_THROWS_AS(format_report(r), Error);
}

TEST_CASE("latency: median and sample bookkeeping") {
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 2, 3}) == 2.5);
  CHECK_THROWS(median({}));

  model::Model m(testing::toy_config(), 1);
  Rng rng(2);
  Testset set{{"as", testing::random_sources(rng, 5, 13, 2, 5)}};
  LatencyOptions opts;
  opts.batch_size = 2;
  opts.repeats = 3;
  const auto res = benchmark_latency(m, set, opts);
  CHECK(res.samples.at("as").size() == 3);
  CHECK(res.median_s.at("as") == median(res.samples.at("as")));
  CHECK_FALSE(res.fingerprint.empty());
}
