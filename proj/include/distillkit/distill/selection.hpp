#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace distillkit::distill {

// Bounded FIFO of recent per-sample losses.
class SelectionQueue {
 public:
  explicit SelectionQueue(int capacity = 1, std::optional<std::string> language = std::nullopt);

  // Appends, evicting the oldest entries beyond capacity.
  void push(double loss);
  // Nearest-rank q-quantile: the ceil(q * n)-th smallest entry (at least the
  // first). Requires a non-empty queue.
  double quantile(double q) const;

  int capacity() const { return capacity_; }
  std::size_t size() const { return losses_.size(); }
  bool empty() const { return losses_.empty(); }
  const std::deque<double>& losses() const { return losses_; }
  const std::optional<std::string>& language() const { return language_; }

  bool operator==(const SelectionQueue&) const = default;

 private:
  int capacity_;
  std::deque<double> losses_;
  std::optional<std::string> language_;
};

// ceil(r * n) with slack for representation error in r * n.
int hard_count(double r, std::size_t n);

// Indices of the ceil(r * B) largest losses, ties to the lower index;
// returned in ascending order.
std::vector<int> select_hard_batch(std::span<const double> losses, double r);

// Sample i is selected iff its loss exceeds the (1 - r)-quantile of the queue
// before this batch is pushed; an empty queue selects nothing. All losses are
// then pushed in batch order.
std::vector<int> select_hard_global(SelectionQueue& queue, std::span<const double> losses, double r);

// select_hard_global per language with that language's queue; queues for
// unseen languages are created with `new_capacity`. Returns batch indices in
// ascending order.
std::vector<int> select_hard_language_wise(std::map<std::string, SelectionQueue>& queues,
                                           std::span<const std::string> languages, std::span<const double> losses,
                                           double r, int new_capacity);

nlohmann::json queue_to_json(const SelectionQueue& queue);
SelectionQueue queue_from_json(const nlohmann::json& j);

}  // namespace distillkit::distill
