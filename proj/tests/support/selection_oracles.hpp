#pragma once

// Brute-force reference selectors: plain sorting, a scan for the nearest-rank
// quantile and a vector used as a FIFO.

#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace distillkit::testing {

inline std::vector<int> oracle_batch(const std::vector<double>& losses, double r) {
  if (losses.empty()) return {};
  std::vector<std::pair<double, int>> keyed;
  for (int i = 0; i < static_cast<int>(losses.size()); ++i) keyed.push_back({-losses[i], i});
  std::sort(keyed.begin(), keyed.end());
  std::size_t k = 0;
  while (static_cast<double>(k) < r * static_cast<double>(losses.size()) - 1e-9) ++k;
  std::vector<int> out;
  for (std::size_t i = 0; i < std::max<std::size_t>(k, 1); ++i) out.push_back(keyed[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

// Smallest stored value with at least q * n values at or below its rank.
inline double oracle_quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (static_cast<double>(i + 1) >= q * n - 1e-9) return values[i];
  }
  return values.back();
}

struct OracleQueue {
  std::size_t capacity = 1;
  std::vector<double> items;

  void push(double v) {
    items.push_back(v);
    if (items.size() > capacity) items.erase(items.begin(), items.end() - static_cast<std::ptrdiff_t>(capacity));
  }
};

inline std::vector<int> oracle_global(OracleQueue& queue, const std::vector<double>& losses, double r) {
  std::vector<int> out;
  if (!queue.items.empty()) {
    const double threshold = oracle_quantile(queue.items, 1.0 - r);
    for (int i = 0; i < static_cast<int>(losses.size()); ++i)
      if (losses[i] > threshold) out.push_back(i);
  }
  for (double l : losses) queue.push(l);
  return out;
}

inline std::vector<int> oracle_language_wise(std::map<std::string, OracleQueue>& queues,
                                             const std::vector<std::string>& languages,
                                             const std::vector<double>& losses, double r, std::size_t new_capacity) {
  std::vector<int> out;
  std::vector<std::string> seen;
  for (const auto& l : languages)
    if (std::find(seen.begin(), seen.end(), l) == seen.end()) seen.push_back(l);
  for (const auto& lang : seen) {
    std::vector<int> idx;
    std::vector<double> part;
    for (int i = 0; i < static_cast<int>(languages.size()); ++i) {
      if (languages[i] == lang) idx.push_back(i), part.push_back(losses[i]);
    }
    if (!queues.count(lang)) queues[lang] = OracleQueue{new_capacity, {}};
    for (int j : oracle_global(queues[lang], part, r)) out.push_back(idx[j]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace distillkit::testing
