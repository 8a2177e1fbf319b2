#include "distillkit/corpus/hq_filter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "distillkit/errors.hpp"

namespace distillkit::corpus {

namespace {

struct Group {
  std::vector<std::size_t> indices;
  std::vector<double> scores;
  double mean = 0.0;
  double std_dev = 0.0;
};

// Threshold strictly between the m-th and (m+1)-th largest of `sorted_desc`.
double cut_between(const std::vector<double>& sorted_desc, std::size_t m) {
  if (m == 0) return sorted_desc.front();
  if (m == sorted_desc.size()) return sorted_desc.back() - 1.0;
  return 0.5 * (sorted_desc[m - 1] + sorted_desc[m]);
}

// Keep counts reachable by a strict threshold: every m whose m-th and
// (m+1)-th largest values differ, plus 0 and n.
std::vector<std::size_t> feasible_counts(const std::vector<double>& sorted_desc) {
  std::vector<std::size_t> out{0};
  for (std::size_t m = 1; m < sorted_desc.size(); ++m) {
    if (sorted_desc[m - 1] > sorted_desc[m]) out.push_back(m);
  }
  out.push_back(sorted_desc.size());
  return out;
}

std::size_t closest_count(const std::vector<std::size_t>& counts, double want) {
  std::size_t best = counts.front();
  for (auto m : counts) {
    if (std::abs(static_cast<double>(m) - want) < std::abs(static_cast<double>(best) - want)) best = m;
  }
  return best;
}

std::vector<std::size_t> keep_by_rank(const Group& g, double fraction) {
  const auto n = g.scores.size();
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return g.scores[a] > g.scores[b]; });
  order.resize(std::min(keep, n));
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> keep_above(const Group& g, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < g.scores.size(); ++i) {
    if (g.scores[i] > threshold) out.push_back(i);
  }
  return out;
}

}  // namespace

FilterResult hq_filter(const Corpus& corpus, const FilterPolicy& policy) {
  if (!(policy.target_fraction > 0.0 && policy.target_fraction <= 1.0)) {
    throw ConfigError("target fraction must lie in (0, 1]");
  }
  std::map<std::string, Group> groups;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& pair = corpus[i];
    if (!pair.similarity) throw Error("hq_filter requires scored pairs; '" + pair.language + "' has none");
    auto& g = groups[pair.language];
    g.indices.push_back(i);
    g.scores.push_back(*pair.similarity);
  }
  for (auto& [lang, g] : groups) {
    const double n = static_cast<double>(g.scores.size());
    for (double s : g.scores) g.mean += s;
    g.mean /= n;
    double var = 0.0;
    for (double s : g.scores) var += (s - g.mean) * (s - g.mean);
    g.std_dev = std::sqrt(var / n);
  }

  std::optional<double> shared_k;
  if (policy.mode == FilterPolicy::Mode::global_k) {
    std::vector<double> z;
    for (const auto& [lang, g] : groups) {
      if (g.std_dev == 0.0 || policy.k_per_language.count(lang)) continue;
      for (double s : g.scores) z.push_back((s - g.mean) / g.std_dev);
    }
    if (!z.empty()) {
      std::sort(z.begin(), z.end(), std::greater<>());
      const auto m = closest_count(feasible_counts(z), policy.target_fraction * static_cast<double>(z.size()));
      shared_k = cut_between(z, m);
    }
  }

  FilterResult result;
  std::vector<bool> keep(corpus.size(), false);
  for (const auto& [lang, g] : groups) {
    LanguageFilterStats st;
    st.total = g.scores.size();
    st.mean = g.mean;
    st.std_dev = g.std_dev;
    std::vector<std::size_t> kept;
    auto explicit_k = policy.k_per_language.find(lang);
    if (g.std_dev == 0.0) {
      st.rank_fallback = true;
    } else if (explicit_k != policy.k_per_language.end()) {
      st.k = explicit_k->second;
    } else if (shared_k) {
      st.k = *shared_k;
    } else {
      std::vector<double> sorted = g.scores;
      std::sort(sorted.begin(), sorted.end(), std::greater<>());
      const auto m = closest_count(feasible_counts(sorted), policy.target_fraction * static_cast<double>(sorted.size()));
      const double realized = static_cast<double>(m) / static_cast<double>(sorted.size());
      if (std::abs(realized - policy.target_fraction) <= policy.tolerance + 1e-12) {
        st.k = (cut_between(sorted, m) - g.mean) / g.std_dev;
      } else {
        st.rank_fallback = true;
      }
    }
    if (st.k) {
      st.threshold = g.mean + *st.k * g.std_dev;
      kept = keep_above(g, *st.threshold);
      result.k_per_language[lang] = *st.k;
    } else {
      kept = keep_by_rank(g, policy.target_fraction);
    }
    st.kept = kept.size();
    for (auto local : kept) keep[g.indices[local]] = true;
    if (kept.empty()) {
      spdlog::warn("hq_filter: no pairs retained for '{}', language excluded", lang);
      result.excluded_languages.push_back(lang);
    }
    result.stats[lang] = st;
  }

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!keep[i]) continue;
    SentencePair p = corpus[i];
    p.provenance = Provenance::hq;
    result.corpus.push_back(std::move(p));
  }
  return result;
}

}  // namespace distillkit::corpus
