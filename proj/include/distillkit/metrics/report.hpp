#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace distillkit::metrics {

struct LanguageMetrics {
  double bleu = 0.0;
  double chrf = 0.0;
  // Median decode seconds; absent when the run did not benchmark.
  std::optional<double> latency_s;
  std::int64_t n_sentences = 0;

  bool operator==(const LanguageMetrics&) const = default;
};

struct EvalReport {
  std::string model_name;
  std::int64_t param_count = 0;
  std::string config_fingerprint;
  std::map<std::string, LanguageMetrics> per_language;

  // Unweighted means over languages; latency only when every language has
  // one; n_sentences is the total.
  LanguageMetrics averages() const;
  // Throws Error when a metric leaves [0, 100] or a count is negative.
  void validate() const;

  bool operator==(const EvalReport&) const = default;
};

nlohmann::json report_to_json(const EvalReport& report);
// Throws Error when the stored averages disagree with the per-language rows.
EvalReport report_from_json(const nlohmann::json& j);

// Canonical machine-readable form: pretty JSON with a trailing newline.
std::string format_report(const EvalReport& report);
EvalReport parse_report(const std::string& text);

// Aligned plain-text table, one row per language and an "Avg" footer.
std::string format_table(const EvalReport& report);

}  // namespace distillkit::metrics
