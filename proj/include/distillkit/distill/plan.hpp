#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace distillkit::distill {

// none: cross-entropy on original targets. sld: cross-entropy on distilled
// targets. wsld: interpolated cross-entropy and word-level KL on distilled
// targets. wld: wsld with weight 1 on original targets. bl, gl, glwd:
// distilled targets with the KL term restricted to hard samples chosen per
// batch, from one global queue, or from one queue per language.
enum class DistillMode { none, sld, wsld, wld, bl, gl, glwd };

std::string to_string(DistillMode mode);
DistillMode distill_mode_from_string(const std::string& s);

struct DistillPlan {
  DistillMode mode = DistillMode::sld;
  // Weight of the word-level KL term.
  double kd_weight = 0.5;
  // Fraction of samples treated as hard.
  double hard_ratio = 0.5;
  // Capacity of the global queue.
  int queue_capacity = 30000;
  // Per-language capacity; defaults to queue_capacity / number of languages.
  std::optional<int> language_queue_capacity;
  double temperature = 1.0;

  // Throws ConfigError on out-of-range fields.
  void validate() const;
  bool needs_teacher() const;
  bool uses_distilled_targets() const;
  bool selective() const;
  int language_capacity(int language_count) const;

  bool operator==(const DistillPlan&) const = default;
};

nlohmann::json plan_to_json(const DistillPlan& plan);
// Missing fields keep their defaults; the result is validated.
DistillPlan plan_from_json(const nlohmann::json& j);

}  // namespace distillkit::distill
