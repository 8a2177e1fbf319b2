#include "distillkit/pipeline/config.hpp"

#include <array>
#include <fstream>
#include <set>

#include "distillkit/corpus/synthetic.hpp"
#include "distillkit/errors.hpp"

namespace distillkit::pipeline {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<Stage, const char*>, 10> kStages{{{Stage::gen_data, "gen-data"},
                                                                 {Stage::train_teacher, "train-teacher"},
                                                                 {Stage::distill_data, "distill-data"},
                                                                 {Stage::train_student, "train-student"},
                                                                 {Stage::hq_filter, "hq-filter"},
                                                                 {Stage::finetune_hq, "finetune-hq"},
                                                                 {Stage::adapter_finetune, "adapter-finetune"},
                                                                 {Stage::evaluate, "evaluate"},
                                                                 {Stage::bench, "bench"},
                                                                 {Stage::report, "report"}}};

template <typename T>
T field(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  std::set<std::string> ok(known.begin(), known.end());
  for (const auto& [k, v] : j.items()) {
    if (!ok.count(k)) throw ConfigError("unknown field " + where + "." + k);
  }
}

DataConfig parse_data(const json& j) {
  reject_unknown(j, {"languages", "noise_rate", "dev_per_language", "test_per_language", "vocab_src", "vocab_tgt"},
                 "data");
  DataConfig d;
  const double noise = field(j, "noise_rate", 0.85, "data");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("data.noise_rate must lie in [0, 1]");
  if (!j.contains("languages") || !j.at("languages").is_object() || j.at("languages").empty()) {
    throw ConfigError("data.languages must map language ids to pair counts");
  }
  const auto table = corpus::table1_specs(1.0, noise);
  for (const auto& [id, count] : j.at("languages").items()) {
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& s) { return s.id == id; });
    if (it == table.end()) throw ConfigError("data.languages: unknown language '" + id + "'");
    auto spec = *it;
    spec.pair_count = count.get<std::int64_t>();
    if (spec.pair_count < 1) throw ConfigError("data.languages." + id + " must be positive");
    d.languages.push_back(spec);
  }
  d.dev_per_language = field<std::int64_t>(j, "dev_per_language", d.dev_per_language, "data");
  d.test_per_language = field<std::int64_t>(j, "test_per_language", d.test_per_language, "data");
  d.vocab_src = field(j, "vocab_src", d.vocab_src, "data");
  d.vocab_tgt = field(j, "vocab_tgt", d.vocab_tgt, "data");
  if (d.dev_per_language < 1 || d.test_per_language < 1) throw ConfigError("data dev/test sizes must be positive");
  return d;
}

TrainingConfig parse_training(const json& j, const TrainingConfig& base, const std::string& where) {
  reject_unknown(j,
                 {"base_lr", "beta1", "beta2", "warmup_steps", "max_grad_norm", "label_smoothing", "dropout",
                  "batch_tokens", "max_updates", "eval_interval", "patience"},
                 where);
  TrainingConfig t = base;
  auto& o = t.trainer.optimizer;
  o.base_lr = field(j, "base_lr", o.base_lr, where);
  o.beta1 = field(j, "beta1", o.beta1, where);
  o.beta2 = field(j, "beta2", o.beta2, where);
  o.warmup_steps = field(j, "warmup_steps", o.warmup_steps, where);
  o.max_grad_norm = field(j, "max_grad_norm", o.max_grad_norm, where);
  o.label_smoothing = field(j, "label_smoothing", o.label_smoothing, where);
  o.dropout = field(j, "dropout", o.dropout, where);
  t.trainer.batch_tokens = field(j, "batch_tokens", t.trainer.batch_tokens, where);
  t.trainer.max_updates = field<std::int64_t>(j, "max_updates", t.trainer.max_updates, where);
  t.trainer.eval_interval = field(j, "eval_interval", t.trainer.eval_interval, where);
  t.trainer.patience = field(j, "patience", t.trainer.patience, where);
  try {
    t.trainer.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return t;
}

model::ModelConfig resolve_model(const json& ref, const json& models, const std::string& where) {
  model::ModelConfig cfg;
  if (ref.is_string()) {
    const auto name = ref.get<std::string>();
    if (models.contains(name)) {
      cfg = models.at(name).get<model::ModelConfig>();
    } else {
      try {
        cfg = model::full_scale_config(name);
      } catch (const Error&) {
        throw ConfigError(where + ": unknown model '" + name + "'");
      }
    }
    cfg.name = name;
  } else if (ref.is_object()) {
    cfg = ref.get<model::ModelConfig>();
  } else {
    throw ConfigError(where + " must name a model or define one");
  }
  // Vocabulary sizes come from the data stage; placeholders keep validation meaningful.
  cfg.vocab_src = std::max(cfg.vocab_src, 5);
  cfg.vocab_tgt = std::max(cfg.vocab_tgt, 5);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return cfg;
}

corpus::FilterPolicy parse_hq(const json& j) {
  reject_unknown(j, {"target_fraction", "tolerance", "mode", "k_per_language"}, "hq_filter");
  corpus::FilterPolicy p;
  p.target_fraction = field(j, "target_fraction", p.target_fraction, "hq_filter");
  p.tolerance = field(j, "tolerance", p.tolerance, "hq_filter");
  const auto mode = field<std::string>(j, "mode", "per_language_k", "hq_filter");
  if (mode == "per_language_k") p.mode = corpus::FilterPolicy::Mode::per_language_k;
  else if (mode == "global_k") p.mode = corpus::FilterPolicy::Mode::global_k;
  else throw ConfigError("hq_filter.mode must be per_language_k or global_k");
  p.k_per_language = field(j, "k_per_language", p.k_per_language, "hq_filter");
  if (!(p.target_fraction > 0.0 && p.target_fraction <= 1.0)) throw ConfigError("hq_filter.target_fraction must lie in (0, 1]");
  return p;
}

}  // namespace

std::string to_string(Stage stage) {
  for (const auto& [s, name] : kStages)
    if (s == stage) return name;
  throw ConfigError("unknown stage");
}

Stage stage_from_string(const std::string& s) {
  for (const auto& [stage, name] : kStages)
    if (s == name) return stage;
  throw ConfigError("unknown stage '" + s + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = [] {
    std::vector<Stage> v;
    for (const auto& [s, name] : kStages) v.push_back(s);
    return v;
  }();
  return stages;
}

void FinetuneProfile::validate() const {
  if (!(lr_scale > 0.0 && lr_scale < 1.0)) throw ConfigError("finetune_hq.lr_scale must lie in (0, 1)");
  if (!(batch_scale > 0.0 && batch_scale <= 1.0)) throw ConfigError("finetune_hq.batch_scale must lie in (0, 1]");
  if (warmup_steps < 1 || max_updates < 0 || eval_interval < 1 || patience < 0) {
    throw ConfigError("finetune_hq: warmup_steps, eval_interval must be positive and max_updates, patience non-negative");
  }
}

void AdapterProfile::validate() const {
  if (bottleneck < 1) throw ConfigError("adapters.bottleneck must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("adapters.dropout must lie in [0, 1)");
  if (!(lr > 0.0)) throw ConfigError("adapters.lr must be positive");
  if (warmup_steps < 1 || max_updates < 0 || eval_interval < 1 || batch_tokens < 1) {
    throw ConfigError("adapters: warmup_steps, eval_interval and batch_tokens must be positive");
  }
}

const StudentConfig& ExperimentConfig::student(const std::string& name) const {
  for (const auto& s : students)
    if (s.name == name) return s;
  throw ConfigError("no student variant named '" + name + "'");
}

ExperimentConfig parse_experiment(const json& j) {
  reject_unknown(j,
                 {"seed", "data", "models", "training", "teacher", "students", "distill", "hq_filter", "finetune_hq",
                  "adapters", "evaluate", "bench", "stage"},
                 "config");
  ExperimentConfig e;
  e.raw = j;
  e.seed = field<std::uint64_t>(j, "seed", e.seed, "config");
  if (!j.contains("data")) throw ConfigError("config.data is required");
  e.data = parse_data(j.at("data"));
  const json models = j.value("models", json::object());

  TrainingConfig defaults;
  defaults = parse_training(j.value("training", json::object()), defaults, "training");

  if (!j.contains("teacher")) throw ConfigError("config.teacher is required");
  const auto& t = j.at("teacher");
  reject_unknown(t, {"model", "training"}, "teacher");
  if (!t.contains("model")) throw ConfigError("teacher.model is required");
  e.teacher_model = resolve_model(t.at("model"), models, "teacher.model");
  e.teacher_training = parse_training(t.value("training", json::object()), defaults, "teacher.training");

  std::set<std::string> names;
  for (const auto& s : j.value("students", json::array())) {
    reject_unknown(s, {"name", "model", "plan", "training", "corpus"}, "students[]");
    StudentConfig sc;
    sc.name = field<std::string>(s, "name", "", "students[]");
    if (sc.name.empty()) throw ConfigError("students[].name is required");
    if (sc.name == "teacher" || sc.name.find_first_of("/+ ") != std::string::npos) {
      throw ConfigError("students[].name '" + sc.name + "' is reserved or contains '/', '+' or spaces");
    }
    if (!names.insert(sc.name).second) throw ConfigError("duplicate student '" + sc.name + "'");
    const std::string where = "students." + sc.name;
    if (!s.contains("model")) throw ConfigError(where + ".model is required");
    sc.model = resolve_model(s.at("model"), models, where + ".model");
    try {
      sc.plan = distill::plan_from_json(s.value("plan", json::object()));
    } catch (const ConfigError& err) {
      throw ConfigError(where + ".plan: " + err.what());
    }
    sc.training = parse_training(s.value("training", json::object()), defaults, where + ".training");
    sc.corpus = field<std::string>(s, "corpus", "", where);
    e.students.push_back(std::move(sc));
  }

  const json d = j.value("distill", json::object());
  reject_unknown(d, {"beam", "length_penalty", "batch_size"}, "distill");
  e.distill.beam = field(d, "beam", e.distill.beam, "distill");
  e.distill.length_penalty = field(d, "length_penalty", e.distill.length_penalty, "distill");
  e.distill.batch_size = field(d, "batch_size", e.distill.batch_size, "distill");
  if (e.distill.beam < 1 || e.distill.batch_size < 1) throw ConfigError("distill.beam and batch_size must be positive");

  e.hq = parse_hq(j.value("hq_filter", json::object()));

  const json f = j.value("finetune_hq", json::object());
  reject_unknown(f, {"lr_scale", "batch_scale", "warmup_steps", "max_updates", "eval_interval", "patience", "students"},
                 "finetune_hq");
  auto& fp = e.finetune;
  fp.lr_scale = field(f, "lr_scale", fp.lr_scale, "finetune_hq");
  fp.batch_scale = field(f, "batch_scale", fp.batch_scale, "finetune_hq");
  fp.warmup_steps = field(f, "warmup_steps", fp.warmup_steps, "finetune_hq");
  fp.max_updates = field<std::int64_t>(f, "max_updates", fp.max_updates, "finetune_hq");
  fp.eval_interval = field(f, "eval_interval", fp.eval_interval, "finetune_hq");
  fp.patience = field(f, "patience", fp.patience, "finetune_hq");
  fp.students = field(f, "students", fp.students, "finetune_hq");
  fp.validate();
  for (const auto& s : fp.students) e.student(s);

  const json a = j.value("adapters", json::object());
  reject_unknown(a,
                 {"student", "groups", "bottleneck", "dropout", "lr", "warmup_steps", "warmup_overrides", "max_updates",
                  "eval_interval", "patience", "batch_tokens"},
                 "adapters");
  auto& ap = e.adapters;
  ap.student = field<std::string>(a, "student", "", "adapters");
  ap.groups = field(a, "groups", ap.groups, "adapters");
  ap.bottleneck = field(a, "bottleneck", ap.bottleneck, "adapters");
  ap.dropout = field(a, "dropout", ap.dropout, "adapters");
  ap.lr = field(a, "lr", ap.lr, "adapters");
  ap.warmup_steps = field(a, "warmup_steps", ap.warmup_steps, "adapters");
  ap.warmup_overrides = field(a, "warmup_overrides", ap.warmup_overrides, "adapters");
  ap.max_updates = field<std::int64_t>(a, "max_updates", ap.max_updates, "adapters");
  ap.eval_interval = field(a, "eval_interval", ap.eval_interval, "adapters");
  ap.patience = field(a, "patience", ap.patience, "adapters");
  ap.batch_tokens = field(a, "batch_tokens", ap.batch_tokens, "adapters");
  ap.validate();
  if (!ap.student.empty()) e.student(ap.student);

  const json ev = j.value("evaluate", json::object());
  reject_unknown(ev, {"beam", "length_penalty", "batch_size"}, "evaluate");
  e.eval.beam = field(ev, "beam", e.eval.beam, "evaluate");
  e.eval.length_penalty = field(ev, "length_penalty", e.eval.length_penalty, "evaluate");
  e.eval.batch_size = field(ev, "batch_size", e.eval.batch_size, "evaluate");
  if (e.eval.beam < 1 || e.eval.batch_size < 1) throw ConfigError("evaluate.beam and batch_size must be positive");

  const json b = j.value("bench", json::object());
  reject_unknown(b, {"batch_size", "repeats", "warmup", "beam", "variants"}, "bench");
  e.bench.batch_size = field(b, "batch_size", e.bench.batch_size, "bench");
  e.bench.repeats = field(b, "repeats", e.bench.repeats, "bench");
  e.bench.warmup = field(b, "warmup", e.bench.warmup, "bench");
  e.bench.beam = field(b, "beam", e.bench.beam, "bench");
  e.bench.variants = field(b, "variants", e.bench.variants, "bench");
  if (e.bench.batch_size < 1 || e.bench.repeats < 5 || e.bench.warmup < 1 || e.bench.beam < 1) {
    throw ConfigError("bench needs batch_size >= 1, repeats >= 5, warmup >= 1 and beam >= 1");
  }
  return e;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("missing config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& err) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + err.what());
  }
  return parse_experiment(j);
}

}  // namespace distillkit::pipeline
