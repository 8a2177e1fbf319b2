#include "distillkit/metrics/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "distillkit/errors.hpp"

namespace distillkit::metrics {

using nlohmann::json;

namespace {

json metrics_to_json(const LanguageMetrics& m) {
  json j;
  j["bleu"] = m.bleu;
  j["chrf"] = m.chrf;
  j["latency_s"] = m.latency_s ? json(*m.latency_s) : json(nullptr);
  j["n_sentences"] = m.n_sentences;
  return j;
}

LanguageMetrics metrics_from_json(const json& j) {
  LanguageMetrics m;
  m.bleu = j.at("bleu").get<double>();
  m.chrf = j.at("chrf").get<double>();
  if (!j.at("latency_s").is_null()) m.latency_s = j.at("latency_s").get<double>();
  m.n_sentences = j.at("n_sentences").get<std::int64_t>();
  return m;
}

std::string fixed(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

bool close(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)); }

}  // namespace

LanguageMetrics EvalReport::averages() const {
  LanguageMetrics avg;
  if (per_language.empty()) return avg;
  bool all_latency = true;
  double latency = 0.0;
  for (const auto& [lang, m] : per_language) {
    avg.bleu += m.bleu;
    avg.chrf += m.chrf;
    avg.n_sentences += m.n_sentences;
    if (m.latency_s) latency += *m.latency_s;
    else all_latency = false;
  }
  const double n = static_cast<double>(per_language.size());
  avg.bleu /= n;
  avg.chrf /= n;
  if (all_latency) avg.latency_s = latency / n;
  return avg;
}

void EvalReport::validate() const {
  for (const auto& [lang, m] : per_language) {
    if (!(m.bleu >= 0.0 && m.bleu <= 100.0)) throw Error("report: BLEU out of range for " + lang);
    if (!(m.chrf >= 0.0 && m.chrf <= 100.0)) throw Error("report: chrF++ out of range for " + lang);
    if (m.latency_s && !(*m.latency_s >= 0.0)) throw Error("report: negative latency for " + lang);
    if (m.n_sentences < 0) throw Error("report: negative sentence count for " + lang);
  }
  if (param_count < 0) throw Error("report: negative parameter count");
}

json report_to_json(const EvalReport& report) {
  report.validate();
  json j;
  j["model_name"] = report.model_name;
  j["param_count"] = report.param_count;
  j["config_fingerprint"] = report.config_fingerprint;
  json langs = json::object();
  for (const auto& [lang, m] : report.per_language) langs[lang] = metrics_to_json(m);
  j["per_language"] = langs;
  j["averages"] = metrics_to_json(report.averages());
  return j;
}

EvalReport report_from_json(const json& j) {
  EvalReport report;
  report.model_name = j.at("model_name").get<std::string>();
  report.param_count = j.at("param_count").get<std::int64_t>();
  report.config_fingerprint = j.at("config_fingerprint").get<std::string>();
  for (const auto& [lang, m] : j.at("per_language").items()) report.per_language[lang] = metrics_from_json(m);
  report.validate();
  const auto stored = metrics_from_json(j.at("averages"));
  const auto expected = report.averages();
  const bool latency_ok = stored.latency_s.has_value() == expected.latency_s.has_value() &&
                          (!stored.latency_s || close(*stored.latency_s, *expected.latency_s));
  if (!close(stored.bleu, expected.bleu) || !close(stored.chrf, expected.chrf) || !latency_ok ||
      stored.n_sentences != expected.n_sentences) {
    throw Error("report: stored averages disagree with per-language rows");
  }
  return report;
}

std::string format_report(const EvalReport& report) { return report_to_json(report).dump(2) + "\n"; }

EvalReport parse_report(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(std::string("report: malformed JSON: ") + e.what());
  }
  return report_from_json(j);
}

std::string format_table(const EvalReport& report) {
  std::vector<std::vector<std::string>> rows{{"Lang", "BLEU", "chrF++", "Latency(s)", "N"}};
  auto row = [](const std::string& name, const LanguageMetrics& m) {
    return std::vector<std::string>{name, fixed(m.bleu, 2), fixed(m.chrf, 2),
                                    m.latency_s ? fixed(*m.latency_s, 4) : "-", std::to_string(m.n_sentences)};
  };
  for (const auto& [lang, m] : report.per_language) rows.push_back(row(lang, m));
  rows.push_back(row("Avg", report.averages()));

  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());

  std::ostringstream os;
  os << report.model_name << " (" << report.param_count << " parameters)\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i + 1 == rows.size()) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      const auto& cell = rows[i][c];
      const std::string pad(width[c] - cell.size(), ' ');
      os << (c == 0 ? cell + pad : pad + cell) << (c + 1 < rows[i].size() ? "  " : "");
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace distillkit::metrics
