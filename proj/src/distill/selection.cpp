#include "distillkit/distill/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "distillkit/errors.hpp"

namespace distillkit::distill {

SelectionQueue::SelectionQueue(int capacity, std::optional<std::string> language)
    : capacity_(capacity), language_(std::move(language)) {
  if (capacity < 1) throw ConfigError("selection queue capacity must be at least 1");
}

void SelectionQueue::push(double loss) {
  losses_.push_back(loss);
  while (losses_.size() > static_cast<std::size_t>(capacity_)) losses_.pop_front();
}

double SelectionQueue::quantile(double q) const {
  if (losses_.empty()) throw PreconditionError("quantile of an empty selection queue");
  std::vector<double> sorted(losses_.begin(), losses_.end());
  std::sort(sorted.begin(), sorted.end());
  const int rank = std::clamp(hard_count(q, sorted.size()), 1, static_cast<int>(sorted.size()));
  return sorted[static_cast<std::size_t>(rank - 1)];
}

int hard_count(double r, std::size_t n) {
  return static_cast<int>(std::ceil(r * static_cast<double>(n) - 1e-9));
}

std::vector<int> select_hard_batch(std::span<const double> losses, double r) {
  if (!(r > 0.0 && r <= 1.0)) throw ConfigError("hard ratio must lie in (0, 1]");
  if (losses.empty()) return {};
  std::vector<int> order(losses.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return losses[a] > losses[b]; });
  order.resize(static_cast<std::size_t>(std::max(1, hard_count(r, losses.size()))));
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<int> select_hard_global(SelectionQueue& queue, std::span<const double> losses, double r) {
  if (!(r > 0.0 && r <= 1.0)) throw ConfigError("hard ratio must lie in (0, 1]");
  std::vector<int> selected;
  if (!queue.empty()) {
    const double threshold = queue.quantile(1.0 - r);
    for (std::size_t i = 0; i < losses.size(); ++i)
      if (losses[i] > threshold) selected.push_back(static_cast<int>(i));
  }
  for (double l : losses) queue.push(l);
  return selected;
}

std::vector<int> select_hard_language_wise(std::map<std::string, SelectionQueue>& queues,
                                           std::span<const std::string> languages, std::span<const double> losses,
                                           double r, int new_capacity) {
  if (languages.size() != losses.size()) throw ShapeError("one language per loss is required");
  std::map<std::string, std::vector<int>> groups;
  for (std::size_t i = 0; i < languages.size(); ++i) groups[languages[i]].push_back(static_cast<int>(i));
  std::vector<int> selected;
  for (const auto& [lang, indices] : groups) {
    auto it = queues.find(lang);
    if (it == queues.end()) it = queues.emplace(lang, SelectionQueue(new_capacity, lang)).first;
    std::vector<double> part;
    for (int i : indices) part.push_back(losses[static_cast<std::size_t>(i)]);
    for (int local : select_hard_global(it->second, part, r)) selected.push_back(indices[static_cast<std::size_t>(local)]);
  }
  std::sort(selected.begin(), selected.end());
  return selected;
}

nlohmann::json queue_to_json(const SelectionQueue& queue) {
  nlohmann::json j;
  j["capacity"] = queue.capacity();
  j["language"] = queue.language() ? nlohmann::json(*queue.language()) : nlohmann::json(nullptr);
  j["losses"] = std::vector<double>(queue.losses().begin(), queue.losses().end());
  return j;
}

SelectionQueue queue_from_json(const nlohmann::json& j) {
  std::optional<std::string> lang;
  if (!j.at("language").is_null()) lang = j.at("language").get<std::string>();
  SelectionQueue q(j.at("capacity").get<int>(), lang);
  for (double l : j.at("losses").get<std::vector<double>>()) q.push(l);
  return q;
}

}  // namespace distillkit::distill
