#include "distillkit/distill/plan.hpp"

#include <algorithm>
#include <array>
#include <utility>

#include "distillkit/errors.hpp"

namespace distillkit::distill {

namespace {
constexpr std::array<std::pair<DistillMode, const char*>, 7> kModes{{{DistillMode::none, "none"},
                                                                     {DistillMode::sld, "sld"},
                                                                     {DistillMode::wsld, "wsld"},
                                                                     {DistillMode::wld, "wld"},
                                                                     {DistillMode::bl, "bl"},
                                                                     {DistillMode::gl, "gl"},
                                                                     {DistillMode::glwd, "glwd"}}};
}

std::string to_string(DistillMode mode) {
  for (const auto& [m, name] : kModes)
    if (m == mode) return name;
  throw ConfigError("unknown distillation mode");
}

DistillMode distill_mode_from_string(const std::string& s) {
  std::string lower = s;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& [m, name] : kModes)
    if (lower == name) return m;
  throw ConfigError("unknown distillation mode '" + s + "'");
}

void DistillPlan::validate() const {
  if (!(kd_weight >= 0.0 && kd_weight <= 1.0)) throw ConfigError("kd_weight must lie in [0, 1]");
  if (!(hard_ratio > 0.0 && hard_ratio <= 1.0)) throw ConfigError("hard_ratio must lie in (0, 1]");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if ((mode == DistillMode::gl || mode == DistillMode::glwd) && queue_capacity < 1) {
    throw ConfigError("queue_capacity must be at least 1");
  }
  if (language_queue_capacity && *language_queue_capacity < 1) {
    throw ConfigError("language_queue_capacity must be at least 1");
  }
}

bool DistillPlan::needs_teacher() const {
  return mode == DistillMode::wsld || mode == DistillMode::wld || selective();
}

bool DistillPlan::uses_distilled_targets() const { return mode != DistillMode::none && mode != DistillMode::wld; }

bool DistillPlan::selective() const {
  return mode == DistillMode::bl || mode == DistillMode::gl || mode == DistillMode::glwd;
}

int DistillPlan::language_capacity(int language_count) const {
  if (language_queue_capacity) return *language_queue_capacity;
  return std::max(1, queue_capacity / std::max(1, language_count));
}

nlohmann::json plan_to_json(const DistillPlan& plan) {
  nlohmann::json j;
  j["mode"] = to_string(plan.mode);
  j["kd_weight"] = plan.kd_weight;
  j["hard_ratio"] = plan.hard_ratio;
  j["queue_capacity"] = plan.queue_capacity;
  j["language_queue_capacity"] =
      plan.language_queue_capacity ? nlohmann::json(*plan.language_queue_capacity) : nlohmann::json(nullptr);
  j["temperature"] = plan.temperature;
  return j;
}

DistillPlan plan_from_json(const nlohmann::json& j) {
  DistillPlan p;
  if (j.contains("mode")) p.mode = distill_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("kd_weight")) p.kd_weight = j.at("kd_weight").get<double>();
  if (j.contains("hard_ratio")) p.hard_ratio = j.at("hard_ratio").get<double>();
  if (j.contains("queue_capacity")) p.queue_capacity = j.at("queue_capacity").get<int>();
  if (j.contains("language_queue_capacity") && !j.at("language_queue_capacity").is_null()) {
    p.language_queue_capacity = j.at("language_queue_capacity").get<int>();
  }
  if (j.contains("temperature")) p.temperature = j.at("temperature").get<double>();
  if (p.mode == DistillMode::wld) p.kd_weight = 1.0;
  p.validate();
  return p;
}

}  // namespace distillkit::distill
