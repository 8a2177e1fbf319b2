#include "distillkit/pipeline/stages.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "distillkit/corpus/io.hpp"
#include "distillkit/corpus/script.hpp"
#include "distillkit/corpus/similarity.hpp"
#include "distillkit/corpus/synthetic.hpp"
#include "distillkit/distill/distill_corpus.hpp"
#include "distillkit/errors.hpp"
#include "distillkit/metrics/latency.hpp"
#include "distillkit/metrics/report.hpp"
#include "distillkit/metrics/scores.hpp"
#include "distillkit/model/checkpoint.hpp"
#include "distillkit/model/decode.hpp"
#include "distillkit/pipeline/artifacts.hpp"

namespace distillkit::pipeline {

using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
const std::string kHqSuffix = "+hq";
const std::string kAdapterInfix = "+adapter-";

std::uint64_t derive_seed(std::uint64_t seed, const std::string& label) {
  numerics::Rng rng(seed);
  return rng.fork(numerics::stable_hash(label)).next_u64();
}

json optimizer_json(const TrainerOptions& t) {
  const auto& o = t.optimizer;
  return {{"base_lr", o.base_lr},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"warmup_steps", o.warmup_steps},
          {"max_grad_norm", o.max_grad_norm},
          {"label_smoothing", o.label_smoothing},
          {"dropout", o.dropout},
          {"batch_tokens", t.batch_tokens},
          {"max_updates", t.max_updates},
          {"eval_interval", t.eval_interval},
          {"patience", t.patience}};
}

json specs_json(const std::vector<corpus::LanguageSpec>& specs) {
  json arr = json::array();
  for (const auto& s : specs) {
    arr.push_back({{"id", s.id},
                   {"family", s.family},
                   {"script_offset", s.script_offset},
                   {"reorder", corpus::to_string(s.reorder)},
                   {"pair_count", s.pair_count},
                   {"noise_rate", s.noise_rate}});
  }
  return arr;
}

json quality_json(const std::map<std::string, corpus::QualityStats>& stats) {
  json j = json::object();
  for (const auto& [l, q] : stats) j[l] = {{"mean", q.mean}, {"std_dev", q.std_dev}, {"count", q.count}};
  return j;
}

// Shared state of one stage invocation.
class Context {
 public:
  explicit Context(const StageConfig& cfg, const RunOptions& options)
      : cfg_(cfg), exp_(cfg.experiment), root_(cfg.out_dir), options_(options) {
    fs::create_directories(root_);
  }

  const ExperimentConfig& exp() const { return exp_; }
  const fs::path& root() const { return root_; }

  // Manifest of a finished upstream unit, or PreconditionError naming the stage.
  Manifest upstream(const std::string& unit, const std::string& what, Stage producer) const {
    const auto path = root_ / unit / kManifest;
    if (!fs::exists(path)) {
      throw PreconditionError(to_string(cfg_.stage) + " requires " + what + " (run " + to_string(producer) +
                              " first)");
    }
    auto m = manifest_from_json(json::parse(read_file(path)));
    if (!m.info.value("complete", true)) {
      throw PreconditionError(unit + " is incomplete (its " + to_string(producer) + " run failed)");
    }
    return m;
  }

  // Hash of an upstream file after checking it against its manifest.
  std::string verified(const std::string& rel, const Manifest& producer) const {
    auto it = producer.outputs.find(rel);
    if (it == producer.outputs.end()) throw PreconditionError(rel + " is not recorded by its producing stage");
    const auto hash = sha256_file(root_ / rel);
    if (hash != it->second) {
      throw PreconditionError(rel + " changed after its " + producer.stage + " run; rerun " + producer.stage);
    }
    return hash;
  }

  bool up_to_date(const std::string& unit, const std::string& fingerprint) const {
    if (options_.force) return false;
    const auto path = root_ / unit / kManifest;
    if (!fs::exists(path)) return false;
    const auto m = manifest_from_json(json::parse(read_file(path)));
    if (m.fingerprint != fingerprint || !m.info.value("complete", true)) return false;
    for (const auto& [rel, hash] : m.outputs) {
      if (!fs::exists(root_ / rel) || sha256_file(root_ / rel) != hash) return false;
    }
    return true;
  }

  // Hashes every file in the staged directory, writes the manifest and swaps
  // the directory into place.
  void finish(StageDir& dir, const std::string& unit, Manifest m) const {
    if (m.info.is_null()) m.info = json::object();
    for (const auto& entry : fs::recursive_directory_iterator(dir.path())) {
      if (!entry.is_regular_file()) continue;
      const auto rel = (fs::path(unit) / fs::relative(entry.path(), dir.path())).generic_string();
      m.outputs[rel] = sha256_file(entry.path());
    }
    if (!deterministic_mode()) m.info["environment"] = metrics::environment_fingerprint();
    atomic_write(dir / kManifest, manifest_to_json(m).dump(2) + "\n");
    dir.commit();
  }

  const StageConfig& cfg() const { return cfg_; }

 private:
  const StageConfig& cfg_;
  const ExperimentConfig& exp_;
  fs::path root_;
  RunOptions options_;
};

struct DataBundle {
  corpus::VocabPair vocabs;
  std::map<std::string, std::string> hashes;
};

DataBundle load_vocabs(const Context& ctx, const Manifest& data) {
  DataBundle b;
  for (const char* f : {"data/vocab.src", "data/vocab.src.merges", "data/vocab.tgt", "data/vocab.tgt.merges"}) {
    b.hashes[f] = ctx.verified(f, data);
  }
  b.vocabs.source = corpus::Vocab::load(ctx.root() / "data/vocab.src");
  b.vocabs.target = corpus::Vocab::load(ctx.root() / "data/vocab.tgt");
  return b;
}

model::ModelConfig sized(model::ModelConfig cfg, const corpus::VocabPair& v) {
  cfg.vocab_src = v.source.size();
  cfg.vocab_tgt = v.target.size();
  cfg.validate();
  return cfg;
}

std::string fmt_checkpoint(const model::Model& m, const numerics::AdamState* state, std::int64_t step,
                           const json& extra) {
  return model::serialize_checkpoint(m, state, step, extra);
}

// Trains and writes checkpoint.bin (best), last.bin and train_log.json. A
// diverged run still commits its best checkpoint, flagged incomplete.
void train_unit(const Context& ctx, const std::string& unit, Manifest m, model::Model& student,
                const model::Model* teacher, const EncodedCorpus& data, const DevSet& dev,
                const corpus::Vocab& target_vocab, const distill::DistillPlan& plan, const TrainerOptions& opts,
                const json& extra) {
  StageDir dir(ctx.root() / unit);
  TrainOutcome out;
  try {
    out = train_model(student, teacher, data, dev, target_vocab, plan, opts);
  } catch (const DivergenceError& e) {
    spdlog::error("{}: {}", unit, e.what());
    atomic_write(dir / "checkpoint.bin", fmt_checkpoint(student, nullptr, 0, extra));
    m.info["complete"] = false;
    m.info["error"] = e.what();
    ctx.finish(dir, unit, m);
    throw;
  }
  json ex = extra;
  ex["dev_bleu"] = out.best_dev_bleu;
  atomic_write(dir / "checkpoint.bin", fmt_checkpoint(student, nullptr, out.best_step, ex));
  {
    const auto best = student.snapshot();
    student.restore(out.final_weights);
    json last = extra;
    last["dev_bleu"] = out.final_dev_bleu;
    atomic_write(dir / "last.bin", fmt_checkpoint(student, &out.state.adam, out.updates, last));
    student.restore(best);
  }
  json log = outcome_to_json(out);
  log["selection_queues"] = distill::train_state_to_json(out.state);
  atomic_write(dir / "train_log.json", log.dump(2) + "\n");
  m.info["complete"] = true;
  m.info["best_dev_bleu"] = out.best_dev_bleu;
  m.info["initial_dev_bleu"] = out.initial_dev_bleu;
  m.info["updates"] = out.updates;
  ctx.finish(dir, unit, m);
}

corpus::Corpus load_corpus(const Context& ctx, const std::string& rel, const Manifest& producer,
                           std::map<std::string, std::string>& inputs) {
  inputs[rel] = ctx.verified(rel, producer);
  return corpus::read_corpus(ctx.root() / rel);
}

// ---- stages ----------------------------------------------------------------

StageRun gen_data(const Context& ctx) {
  const auto& e = ctx.exp();
  const std::string unit = "data";
  json config = e.raw.at("data");
  const auto fp = Manifest::compute_fingerprint("gen-data", e.seed, config, {});
  if (ctx.up_to_date(unit, fp)) return {unit, true};

  auto specs = e.data.languages;
  corpus::validate_specs(specs);
  const auto seed = derive_seed(e.seed, "gen-data");
  auto train = corpus::unify_corpus(corpus::make_synthetic_corpus(specs, seed), specs);
  auto dev = corpus::unify_corpus(corpus::make_clean_set(specs, e.data.dev_per_language, seed, "dev"), specs);
  auto test = corpus::unify_corpus(corpus::make_clean_set(specs, e.data.test_per_language, seed, "test"), specs);
  const auto vocabs = corpus::train_subword_vocab(train, e.data.vocab_src, e.data.vocab_tgt);

  StageDir dir(ctx.root() / unit);
  atomic_write(dir / "train.tsv", corpus::format_corpus(train));
  atomic_write(dir / "dev.tsv", corpus::format_corpus(dev));
  atomic_write(dir / "test.tsv", corpus::format_corpus(test));
  vocabs.source.save(dir / "vocab.src");
  vocabs.target.save(dir / "vocab.tgt");
  atomic_write(dir / "languages.json", specs_json(specs).dump(2) + "\n");
  atomic_write(dir / "quality.json", quality_json(corpus::corpus_quality_stats(train)).dump(2) + "\n");
  Manifest m{"gen-data", e.seed, config, {}, {}, fp, {{"pairs", train.size()}}};
  ctx.finish(dir, unit, m);
  return {unit, false};
}

StageRun train_teacher(const Context& ctx) {
  const auto& e = ctx.exp();
  const std::string unit = "teacher";
  const auto data = ctx.upstream("data", "generated data", Stage::gen_data);
  auto bundle = load_vocabs(ctx, data);
  auto inputs = bundle.hashes;
  const auto train = load_corpus(ctx, "data/train.tsv", data, inputs);
  const auto devc = load_corpus(ctx, "data/dev.tsv", data, inputs);
  json config = {{"model", sized(e.teacher_model, bundle.vocabs)}, {"training", optimizer_json(e.teacher_training.trainer)}};
  const auto fp = Manifest::compute_fingerprint("train-teacher", e.seed, config, inputs);
  if (ctx.up_to_date(unit, fp)) return {unit, true};

  const auto seed = derive_seed(e.seed, "train-teacher");
  model::Model teacher(sized(e.teacher_model, bundle.vocabs), seed);
  auto opts = e.teacher_training.trainer;
  opts.seed = seed;
  distill::DistillPlan plan;
  plan.mode = distill::DistillMode::none;
  Manifest m{"train-teacher", e.seed, config, inputs, {}, fp, {{"corpus", "data/train.tsv"}}};
  train_unit(ctx, unit, m, teacher, nullptr, encode_corpus(train, bundle.vocabs), make_dev_set(devc, bundle.vocabs),
             bundle.vocabs.target, plan, opts, {{"variant", "teacher"}});
  return {unit, false};
}

model::Model load_verified_model(const Context& ctx, const std::string& unit, const Manifest& m,
                                 std::map<std::string, std::string>& inputs, json* extra = nullptr) {
  const auto rel = unit + "/checkpoint.bin";
  inputs[rel] = ctx.verified(rel, m);
  auto ck = model::deserialize_checkpoint(read_file(ctx.root() / rel));
  if (extra) *extra = ck.extra;
  ck.model.set_training(false);
  return std::move(ck.model);
}

StageRun distill_data(const Context& ctx) {
  const auto& e = ctx.exp();
  const std::string unit = "distilled";
  const auto data = ctx.upstream("data", "generated data", Stage::gen_data);
  const auto tman = ctx.upstream("teacher", "teacher checkpoint", Stage::train_teacher);
  auto bundle = load_vocabs(ctx, data);
  auto inputs = bundle.hashes;
  const auto train = load_corpus(ctx, "data/train.tsv", data, inputs);
  auto teacher = load_verified_model(ctx, "teacher", tman, inputs);
  json config = {{"distill", e.raw.value("distill", json::object())}, {"data", e.raw.at("data")}};
  const auto fp = Manifest::compute_fingerprint("distill-data", e.seed, config, inputs);
  if (ctx.up_to_date(unit, fp)) return {unit, true};

  distill::DistillOptions opts;
  opts.beam = e.distill.beam;
  opts.length_penalty = e.distill.length_penalty;
  opts.batch_size = e.distill.batch_size;
  auto out = distill::distill_corpus(teacher, train, bundle.vocabs, opts);
  corpus::score_corpus(out.corpus, e.data.languages);

  StageDir dir(ctx.root() / unit);
  atomic_write(dir / "train.tsv", corpus::format_corpus(out.corpus));
  const auto before = corpus::corpus_quality_stats(train);
  const auto after = corpus::corpus_quality_stats(out.corpus);
  json q = json::object();
  for (const auto& [l, s] : before) {
    q[l]["original"] = {{"mean", s.mean}, {"std_dev", s.std_dev}, {"count", s.count}};
    if (after.count(l)) {
      const auto& a = after.at(l);
      q[l]["distilled"] = {{"mean", a.mean}, {"std_dev", a.std_dev}, {"count", a.count}};
    }
  }
  atomic_write(dir / "quality.json", q.dump(2) + "\n");
  atomic_write(dir / "dropped.json", json(out.dropped).dump() + "\n");
  Manifest m{"distill-data", e.seed, config, inputs, {}, fp, {{"dropped", out.dropped.size()}}};
  ctx.finish(dir, unit, m);
  return {unit, false};
}

std::string student_corpus(const StudentConfig& s) {
  if (!s.corpus.empty()) return s.corpus;
  return s.plan.uses_distilled_targets() ? "distilled/train.tsv" : "data/train.tsv";
}

Manifest corpus_producer(const Context& ctx, const std::string& rel) {
  const auto unit = fs::path(rel).begin()->string();
  if (unit == "data") return ctx.upstream("data", "generated data", Stage::gen_data);
  if (unit == "distilled") return ctx.upstream("distilled", "distilled corpus", Stage::distill_data);
  if (unit == "hq") return ctx.upstream("hq", "HQ corpus", Stage::hq_filter);
  throw ConfigError("corpus path " + rel + " is not a stage output");
}

StageRun train_one_student(const Context& ctx, const StudentConfig& s) {
  const auto& e = ctx.exp();
  const std::string unit = "students/" + s.name;
  const auto data = ctx.upstream("data", "generated data", Stage::gen_data);
  auto bundle = load_vocabs(ctx, data);
  auto inputs = bundle.hashes;
  const auto corpus_rel = student_corpus(s);
  const auto train = load_corpus(ctx, corpus_rel, corpus_producer(ctx, corpus_rel), inputs);
  const auto devc = load_corpus(ctx, "data/dev.tsv", data, inputs);
  std::optional<model::Model> teacher;
  if (s.plan.needs_teacher()) {
    const auto tman = ctx.upstream("teacher", "teacher checkpoint", Stage::train_teacher);
    teacher = load_verified_model(ctx, "teacher", tman, inputs);
  }
  json config = {{"model", sized(s.model, bundle.vocabs)},
                 {"plan", distill::plan_to_json(s.plan)},
                 {"training", optimizer_json(s.training.trainer)},
                 {"corpus", corpus_rel}};
  const auto fp = Manifest::compute_fingerprint("train-student", e.seed, config, inputs);
  if (ctx.up_to_date(unit, fp)) return {unit, true};

  const auto seed = derive_seed(e.seed, "train-student:" + s.name);
  model::Model student(sized(s.model, bundle.vocabs), seed);
  auto opts = s.training.trainer;
  opts.seed = seed;
  Manifest m{"train-student", e.seed, config, inputs, {}, fp, {{"corpus", corpus_rel}}};
  spdlog::info("training student {} ({} parameters, plan {})", s.name, student.parameter_count(),
               distill::to_string(s.plan.mode));
  train_unit(ctx, unit, m, student, teacher ? &*teacher : nullptr, encode_corpus(train, bundle.vocabs),
             make_dev_set(devc, bundle.vocabs), bundle.vocabs.target, s.plan, opts, {{"variant", s.name}});
  return {unit, false};
}

StageRun hq_filter_stage(const Context& ctx) {
  const auto& e = ctx.exp();
  const std::string unit = "hq";
  const auto dman = ctx.upstream("distilled", "distilled corpus", Stage::distill_data);
  std::map<std::string, std::string> inputs;
  const auto distilled = load_corpus(ctx, "distilled/train.tsv", dman, inputs);
  json config = {{"hq_filter", e.raw.value("hq_filter", json::object())}};
  const auto fp = Manifest::compute_fingerprint("hq-filter", e.seed, config, inputs);
  if (ctx.up_to_date(unit, fp)) return {unit, true};

  const auto res = corpus::hq_filter(distilled, e.hq);
  json stats = json::object();
  for (const auto& [l, s] : res.stats) {
    stats[l] = {{"total", s.total},
                {"kept", s.kept},
                {"mean", s.mean},
                {"std_dev", s.std_dev},
                {"k", s.k ? json(*s.k) : json(nullptr)},
                {"threshold", s.threshold ? json(*s.threshold) : json(nullptr)},
                {"rank_fallback", s.rank_fallback}};
  }
  const double retention = distilled.empty() ? 0.0 : static_cast<double>(res.corpus.size()) / distilled.size();
  StageDir dir(ctx.root() / unit);
  atomic_write(dir / "train.tsv", corpus::format_corpus(res.corpus));
  atomic_write(dir / "filter.json",
               json{{"languages", stats}, {"retention", retention}, {"excluded", res.excluded_languages}}.dump(2) + "\n");
  Manifest m{"hq-filter", e.seed, config, inputs, {}, fp, {{"retention", retention}}};
  ctx.finish(dir, unit, m);
  return {unit, false};
}

StageRun finetune_one(const Context& ctx, const StudentConfig& s) {
  const auto& e = ctx.exp();
  const std::string unit = "finetuned/" + s.name;
  const auto data = ctx.upstream("data", "generated data", Stage::gen_data);
  const auto sman = ctx.upstream("students/" + s.name, "student checkpoint " + s.name, Stage::train_student);
  if (sman.info.value("corpus", std::string()) != "distilled/train.tsv") {
    throw PreconditionError("finetune-hq requires a student trained on the full distilled corpus; " + s.name +
                            " was trained on " + sman.info.value("corpus", std::string("?")));
  }
  const auto hman = ctx.upstream("hq", "HQ corpus", Stage::hq_filter);
  auto bundle = load_vocabs(ctx, data);
  auto inputs = bundle.hashes;
  const auto hq = load_corpus(ctx, "hq/train.tsv", hman, inputs);
  for (const auto& p : hq) {
    if (p.provenance != corpus::Provenance::hq) {
      throw PreconditionError("finetune-hq: corpus provenance is " + corpus::to_string(p.provenance) + ", expected hq");
    }
  }
  const auto devc = load_corpus(ctx, "data/dev.tsv", data, inputs);
  auto student = load_verified_model(ctx, "students/" + s.name, sman, inputs);
  std::optional<model::Model> teacher;
  if (s.plan.needs_teacher()) {
    const auto tman = ctx.upstream("teacher", "teacher checkpoint", Stage::train_teacher);
    teacher = load_verified_model(ctx, "teacher", tman, inputs);
  }
  auto opts = s.training.trainer;
  const auto& fp_cfg = e.finetune;
  opts.optimizer.base_lr *= fp_cfg.lr_scale;
  opts.optimizer.warmup_steps = fp_cfg.warmup_steps;
  opts.batch_tokens = std::max(1, static_cast<int>(std::lround(opts.batch_tokens * fp_cfg.batch_scale)));
  opts.max_updates = fp_cfg.max_updates;
  opts.eval_interval = fp_cfg.eval_interval;
  opts.patience = fp_cfg.patience;
  json config = {{"plan", distill::plan_to_json(s.plan)}, {"training", optimizer_json(opts)}};
  const auto fp = Manifest::compute_fingerprint("finetune-hq", e.seed, config, inputs);
  if (ctx.up_to_date(unit, fp)) return {unit, true};
  opts.seed = derive_seed(e.seed, "finetune-hq:" + s.name);
  Manifest m{"finetune-hq", e.seed, config, inputs, {}, fp, {{"corpus", "hq/train.tsv"}}};
  train_unit(ctx, unit, m, student, teacher ? &*teacher : nullptr, encode_corpus(hq, bundle.vocabs),
             make_dev_set(devc, bundle.vocabs), bundle.vocabs.target, s.plan, opts, {{"variant", s.name + kHqSuffix}});
  return {unit, false};
}

std::vector<std::string> group_languages(const ExperimentConfig& e, const std::string& group) {
  std::vector<std::string> out;
  for (const auto& s : e.data.languages)
    if (s.id == group || s.family == group) out.push_back(s.id);
  if (out.empty()) throw ConfigError("adapter group '" + group + "' names no configured language or family");
  return out;
}

StageRun adapter_one(const Context& ctx, const std::string& group) {
  const auto& e = ctx.exp();
  const auto& ap = e.adapters;
  const auto& s = e.student(ap.student);
  const std::string unit = "adapters/" + s.name + kAdapterInfix + group;
  const auto langs = group_languages(e, group);
  const auto data = ctx.upstream("data", "generated data", Stage::gen_data);
  const auto sman = ctx.upstream("students/" + s.name, "student checkpoint " + s.name, Stage::train_student);
  const auto dman = ctx.upstream("distilled", "distilled corpus", Stage::distill_data);
  auto bundle = load_vocabs(ctx, data);
  auto inputs = bundle.hashes;
  const auto distilled = load_corpus(ctx, "distilled/train.tsv", dman, inputs);
  const auto devc = load_corpus(ctx, "data/dev.tsv", data, inputs);
  auto in_group = [&](const corpus::SentencePair& p) {
    return std::find(langs.begin(), langs.end(), p.language) != langs.end();
  };
  corpus::Corpus subset, dev_subset;
  std::copy_if(distilled.begin(), distilled.end(), std::back_inserter(subset), in_group);
  std::copy_if(devc.begin(), devc.end(), std::back_inserter(dev_subset), in_group);
  if (subset.empty()) throw Error("adapter group '" + group + "' has no training data");
  auto student = load_verified_model(ctx, "students/" + s.name, sman, inputs);

  auto opts = s.training.trainer;
  opts.optimizer.base_lr = ap.lr;
  auto ov = ap.warmup_overrides.find(group);
  opts.optimizer.warmup_steps = ov != ap.warmup_overrides.end() ? ov->second : ap.warmup_steps;
  opts.batch_tokens = ap.batch_tokens;
  opts.max_updates = ap.max_updates;
  opts.eval_interval = ap.eval_interval;
  opts.patience = ap.patience;
  model::AdapterConfig acfg{group, ap.bottleneck, ap.dropout};
  json config = {{"adapter", acfg}, {"languages", langs}, {"training", optimizer_json(opts)}};
  const auto fp = Manifest::compute_fingerprint("adapter-finetune", e.seed, config, inputs);
  if (ctx.up_to_date(unit, fp)) return {unit, true};

  const auto seed = derive_seed(e.seed, "adapter-finetune:" + group);
  opts.seed = seed;
  student.insert_adapters(acfg, seed);
  student.freeze_base();
  student.set_active_adapter(group);
  const auto expected = model::count_adapter_params(student.config(), acfg);
  if (student.trainable_parameter_count() != expected) {
    throw Error("adapter-finetune: trainable parameters " + std::to_string(student.trainable_parameter_count()) +
                " differ from the adapter count " + std::to_string(expected));
  }
  distill::DistillPlan plan;
  plan.mode = distill::DistillMode::sld;
  Manifest m{"adapter-finetune", e.seed, config, inputs, {}, fp,
             {{"trainable_parameters", expected}, {"languages", langs}}};
  train_unit(ctx, unit, m, student, nullptr, encode_corpus(subset, bundle.vocabs), make_dev_set(dev_subset, bundle.vocabs),
             bundle.vocabs.target, plan, opts,
             {{"variant", s.name + kAdapterInfix + group}, {"adapter_group", group}, {"adapter_languages", langs}});
  return {unit, false};
}

// Decodes every sentence of `split` per language and scores it.
metrics::EvalReport evaluate_split(model::Model& m, const json& extra, const corpus::Corpus& split,
                                   const corpus::VocabPair& vocabs, const EvalConfig& ec, const std::string& variant,
                                   const std::string& fingerprint) {
  std::optional<std::string> group;
  std::vector<std::string> group_langs;
  if (extra.contains("adapter_group")) {
    group = extra.at("adapter_group").get<std::string>();
    group_langs = extra.at("adapter_languages").get<std::vector<std::string>>();
  }
  metrics::EvalReport report;
  report.model_name = variant;
  report.param_count = m.parameter_count(group.has_value());
  report.config_fingerprint = fingerprint;
  std::map<std::string, std::vector<const corpus::SentencePair*>> by_lang;
  for (const auto& p : split) by_lang[p.language].push_back(&p);
  model::BeamOptions beam;
  beam.beam = ec.beam;
  beam.length_penalty = ec.length_penalty;
  for (const auto& [lang, pairs] : by_lang) {
    const bool routed = group && std::find(group_langs.begin(), group_langs.end(), lang) != group_langs.end();
    m.set_active_adapter(routed ? group : std::nullopt);
    std::vector<metrics::Tokens> hyps, refs;
    std::vector<std::string> hyp_text, ref_text;
    for (std::size_t start = 0; start < pairs.size(); start += static_cast<std::size_t>(ec.batch_size)) {
      const auto end = std::min(pairs.size(), start + static_cast<std::size_t>(ec.batch_size));
      std::vector<std::vector<int>> sources;
      std::vector<int> max_len;
      for (std::size_t i = start; i < end; ++i) {
        sources.push_back(vocabs.source.encode(pairs[i]->source));
        max_len.push_back(model::default_max_len(m.config(), static_cast<int>(sources.back().size())));
      }
      const auto out = model::decode_batch(m, sources, max_len, beam);
      for (std::size_t i = start; i < end; ++i) {
        const auto& h = out[i - start];
        const auto n = h.complete && !h.tokens.empty() ? h.tokens.size() - 1 : h.tokens.size();
        hyps.push_back(vocabs.target.decode(std::span<const int>(h.tokens.data(), n)));
        refs.push_back(pairs[i]->target);
        hyp_text.push_back(metrics::detokenize(hyps.back()));
        ref_text.push_back(metrics::detokenize(refs.back()));
      }
    }
    metrics::LanguageMetrics lm;
    lm.bleu = metrics::corpus_bleu(hyps, refs);
    lm.chrf = metrics::chrf_pp(hyp_text, ref_text);
    lm.n_sentences = static_cast<std::int64_t>(pairs.size());
    report.per_language[lang] = lm;
  }
  m.set_active_adapter(std::nullopt);
  return report;
}

struct VariantSource {
  std::string unit;
  Stage producer;
};

VariantSource variant_source(const std::string& variant) {
  if (variant == "teacher") return {"teacher", Stage::train_teacher};
  if (variant.find(kAdapterInfix) != std::string::npos) return {"adapters/" + variant, Stage::adapter_finetune};
  if (variant.size() > kHqSuffix.size() &&
      variant.compare(variant.size() - kHqSuffix.size(), kHqSuffix.size(), kHqSuffix) == 0) {
    return {"finetuned/" + variant.substr(0, variant.size() - kHqSuffix.size()), Stage::finetune_hq};
  }
  return {"students/" + variant, Stage::train_student};
}

StageRun evaluate_one(const Context& ctx, const std::string& variant) {
  const auto& e = ctx.exp();
  const std::string unit = "eval/" + variant;
  const auto data = ctx.upstream("data", "generated data", Stage::gen_data);
  const auto src = variant_source(variant);
  const auto vman = ctx.upstream(src.unit, "checkpoint of " + variant, src.producer);
  auto bundle = load_vocabs(ctx, data);
  auto inputs = bundle.hashes;
  const auto dev = load_corpus(ctx, "data/dev.tsv", data, inputs);
  const auto test = load_corpus(ctx, "data/test.tsv", data, inputs);
  json extra;
  auto m = load_verified_model(ctx, src.unit, vman, inputs, &extra);
  json config = {{"evaluate", e.raw.value("evaluate", json::object())}, {"variant", variant}};
  const auto fp = Manifest::compute_fingerprint("evaluate", e.seed, config, inputs);
  if (ctx.up_to_date(unit, fp)) return {unit, true};

  json mc;
  model::to_json(mc, m.config());
  const auto fingerprint = sha256_hex(mc.dump() + inputs.at(src.unit + "/checkpoint.bin")).substr(0, 16);
  StageDir dir(ctx.root() / unit);
  for (const auto& [name, split] : {std::pair{"dev", &dev}, std::pair{"test", &test}}) {
    const auto r = evaluate_split(m, extra, *split, bundle.vocabs, e.eval, variant, fingerprint);
    atomic_write(dir / (std::string(name) + ".json"), metrics::format_report(r));
    atomic_write(dir / (std::string(name) + ".txt"), metrics::format_table(r));
  }
  Manifest man{"evaluate", e.seed, config, inputs, {}, fp, {}};
  ctx.finish(dir, unit, man);
  return {unit, false};
}

StageRun bench_one(const Context& ctx, const std::string& variant) {
  const auto& e = ctx.exp();
  const std::string unit = "bench/" + variant;
  const auto data = ctx.upstream("data", "generated data", Stage::gen_data);
  const auto src = variant_source(variant);
  const auto vman = ctx.upstream(src.unit, "checkpoint of " + variant, src.producer);
  const auto eman = ctx.upstream("eval/" + variant, "evaluation of " + variant, Stage::evaluate);
  auto bundle = load_vocabs(ctx, data);
  auto inputs = bundle.hashes;
  const auto test = load_corpus(ctx, "data/test.tsv", data, inputs);
  json extra;
  auto m = load_verified_model(ctx, src.unit, vman, inputs, &extra);
  inputs["eval/" + variant + "/test.json"] = ctx.verified("eval/" + variant + "/test.json", eman);
  json config = {{"bench", e.raw.value("bench", json::object())}, {"variant", variant}};
  const auto fp = Manifest::compute_fingerprint("bench", e.seed, config, inputs);
  if (ctx.up_to_date(unit, fp)) return {unit, true};

  metrics::Testset set;
  for (const auto& p : test) set[p.language].push_back(bundle.vocabs.source.encode(p.source));
  metrics::LatencyOptions lo;
  lo.batch_size = e.bench.batch_size;
  lo.repeats = e.bench.repeats;
  lo.warmup = e.bench.warmup;
  lo.beam.beam = e.bench.beam;
  const auto res = metrics::benchmark_latency(m, set, lo);
  auto report = metrics::parse_report(read_file(ctx.root() / "eval" / variant / "test.json"));
  for (auto& [lang, lm] : report.per_language) lm.latency_s = res.median_s.at(lang);
  StageDir dir(ctx.root() / unit);
  atomic_write(dir / "report.json", metrics::format_report(report));
  atomic_write(dir / "report.txt", metrics::format_table(report));
  atomic_write(dir / "latency.json",
               json{{"samples", res.samples}, {"median_s", res.median_s}, {"environment", res.fingerprint}}.dump(2) + "\n");
  Manifest man{"bench", e.seed, config, inputs, {}, fp, {{"environment", res.fingerprint}}};
  ctx.finish(dir, unit, man);
  return {unit, false};
}

std::string fixed(double v, int p = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", p, v);
  return buf;
}

std::string matrix(const std::vector<std::string>& langs, const std::map<std::string, metrics::EvalReport>& reports,
                   bool chrf) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> head{"Variant"};
  head.insert(head.end(), langs.begin(), langs.end());
  head.push_back("Avg");
  head.push_back("Params");
  rows.push_back(head);
  for (const auto& [name, r] : reports) {
    std::vector<std::string> row{name};
    for (const auto& l : langs) {
      auto it = r.per_language.find(l);
      row.push_back(it == r.per_language.end() ? "-" : fixed(chrf ? it->second.chrf : it->second.bleu));
    }
    const auto avg = r.averages();
    row.push_back(fixed(chrf ? avg.chrf : avg.bleu));
    row.push_back(std::to_string(r.param_count));
    rows.push_back(row);
  }
  std::vector<std::size_t> w(head.size(), 0);
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size(); ++c) w[c] = std::max(w[c], r[c].size());
  std::string out;
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      const std::string pad(w[c] - r[c].size(), ' ');
      out += (c == 0 ? r[c] + pad : pad + r[c]);
      out += c + 1 < r.size() ? "  " : "\n";
    }
  }
  return out;
}

StageRun report_stage(const Context& ctx) {
  const auto& e = ctx.exp();
  const std::string unit = "report";
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::map<std::string, metrics::EvalReport>> by_split;
  const auto variants = available_variants(ctx.root());
  for (const auto& v : variants) {
    if (!fs::exists(ctx.root() / "eval" / v / kManifest)) continue;
    const auto eman = ctx.upstream("eval/" + v, "evaluation of " + v, Stage::evaluate);
    for (const char* split : {"dev", "test"}) {
      const auto rel = "eval/" + v + "/" + split + ".json";
      inputs[rel] = ctx.verified(rel, eman);
      by_split[split][v] = metrics::parse_report(read_file(ctx.root() / rel));
    }
  }
  if (by_split.empty()) throw PreconditionError("report requires evaluation reports (run evaluate first)");
  std::map<std::string, metrics::EvalReport> bench;
  if (!deterministic_mode()) {
    for (const auto& v : variants) {
      if (!fs::exists(ctx.root() / "bench" / v / kManifest)) continue;
      const auto bman = ctx.upstream("bench/" + v, "benchmark of " + v, Stage::bench);
      const auto rel = "bench/" + v + "/report.json";
      inputs[rel] = ctx.verified(rel, bman);
      bench[v] = metrics::parse_report(read_file(ctx.root() / rel));
    }
  }
  json quality, filter;
  if (fs::exists(ctx.root() / "distilled" / kManifest)) {
    const auto dman = ctx.upstream("distilled", "distilled corpus", Stage::distill_data);
    inputs["distilled/quality.json"] = ctx.verified("distilled/quality.json", dman);
    quality = json::parse(read_file(ctx.root() / "distilled/quality.json"));
  }
  if (fs::exists(ctx.root() / "hq" / kManifest)) {
    const auto hman = ctx.upstream("hq", "HQ corpus", Stage::hq_filter);
    inputs["hq/filter.json"] = ctx.verified("hq/filter.json", hman);
    filter = json::parse(read_file(ctx.root() / "hq/filter.json"));
  }
  json config = json::object();
  const auto fp = Manifest::compute_fingerprint("report", e.seed, config, inputs);
  if (ctx.up_to_date(unit, fp)) return {unit, true};

  std::vector<std::string> langs;
  for (const auto& s : e.data.languages) langs.push_back(s.id);
  std::sort(langs.begin(), langs.end());
  std::string text;
  json summary;
  for (const auto& [split, reports] : by_split) {
    text += "== " + split + " BLEU ==\n" + matrix(langs, reports, false) + "\n";
    text += "== " + split + " chrF++ ==\n" + matrix(langs, reports, true) + "\n";
    for (const auto& [v, r] : reports) summary[split][v] = metrics::report_to_json(r);
  }
  if (!quality.is_null()) {
    text += "== similarity (original -> distilled) ==\n";
    for (const auto& [l, q] : quality.items()) {
      text += l + "  mean " + fixed(q["original"]["mean"].get<double>(), 4) + " -> " +
              fixed(q["distilled"]["mean"].get<double>(), 4) + "  std " +
              fixed(q["original"]["std_dev"].get<double>(), 4) + " -> " +
              fixed(q["distilled"]["std_dev"].get<double>(), 4) + "\n";
    }
    text += "\n";
    summary["quality"] = quality;
  }
  if (!filter.is_null()) {
    text += "== HQ filter ==\nretention " + fixed(filter["retention"].get<double>(), 4) + "\n";
    for (const auto& [l, s] : filter["languages"].items()) {
      text += l + "  kept " + std::to_string(s["kept"].get<std::size_t>()) + " / " +
              std::to_string(s["total"].get<std::size_t>()) + "\n";
    }
    text += "\n";
    summary["hq_filter"] = filter;
  }
  for (const auto& [v, r] : bench) {
    text += "== latency " + v + " ==\n" + metrics::format_table(r) + "\n";
    summary["latency"][v] = metrics::report_to_json(r);
  }
  StageDir dir(ctx.root() / unit);
  atomic_write(dir / "summary.txt", text);
  atomic_write(dir / "summary.json", summary.dump(2) + "\n");
  Manifest man{"report", e.seed, config, inputs, {}, fp, {}};
  ctx.finish(dir, unit, man);
  return {unit, false};
}

template <typename F>
void for_selected(const std::vector<std::string>& names, const std::optional<std::string>& only, F&& f) {
  if (only && std::find(names.begin(), names.end(), *only) == names.end()) {
    throw ConfigError("no variant named '" + *only + "' for this stage");
  }
  for (const auto& n : names)
    if (!only || *only == n) f(n);
}

}  // namespace

std::string variant_dir(const std::string& variant) { return variant_source(variant).unit; }

std::vector<std::string> available_variants(const fs::path& run_dir) {
  std::vector<std::string> out;
  auto has = [&](const fs::path& p) { return fs::exists(p / kManifest) && fs::exists(p / "checkpoint.bin"); };
  if (has(run_dir / "teacher")) out.push_back("teacher");
  auto scan = [&](const char* sub, const std::string& suffix) {
    if (!fs::exists(run_dir / sub)) return;
    std::vector<std::string> names;
    for (const auto& d : fs::directory_iterator(run_dir / sub)) {
      const auto name = d.path().filename().string();
      if (d.is_directory() && has(d.path()) && name.find(".tmp") == std::string::npos) names.push_back(name + suffix);
    }
    std::sort(names.begin(), names.end());
    out.insert(out.end(), names.begin(), names.end());
  };
  scan("students", "");
  scan("finetuned", kHqSuffix);
  scan("adapters", "");
  return out;
}

StageResult run_stage(const StageConfig& cfg, const RunOptions& options) {
  Context ctx(cfg, options);
  const auto& e = cfg.experiment;
  StageResult result;
  result.stage = cfg.stage;
  auto add = [&](StageRun r) {
    spdlog::info("{}: {} {}", to_string(cfg.stage), r.unit, r.cached ? "up to date" : "done");
    result.runs.push_back(std::move(r));
  };
  std::vector<std::string> students;
  for (const auto& s : e.students) students.push_back(s.name);
  switch (cfg.stage) {
    case Stage::gen_data:
      add(gen_data(ctx));
      break;
    case Stage::train_teacher:
      add(train_teacher(ctx));
      break;
    case Stage::distill_data:
      add(distill_data(ctx));
      break;
    case Stage::train_student:
      if (students.empty()) throw ConfigError("train-student needs at least one entry in students");
      for_selected(students, cfg.variant, [&](const std::string& n) { add(train_one_student(ctx, e.student(n))); });
      break;
    case Stage::hq_filter:
      add(hq_filter_stage(ctx));
      break;
    case Stage::finetune_hq: {
      auto names = e.finetune.students;
      if (names.empty()) {
        for (const auto& s : e.students)
          if (s.plan.uses_distilled_targets()) names.push_back(s.name);
      }
      if (names.empty()) throw ConfigError("finetune-hq has no student trained on distilled data");
      for_selected(names, cfg.variant, [&](const std::string& n) { add(finetune_one(ctx, e.student(n))); });
      break;
    }
    case Stage::adapter_finetune:
      if (e.adapters.student.empty() || e.adapters.groups.empty()) {
        throw ConfigError("adapter-finetune needs adapters.student and adapters.groups");
      }
      for_selected(e.adapters.groups, cfg.variant, [&](const std::string& g) { add(adapter_one(ctx, g)); });
      break;
    case Stage::evaluate: {
      const auto vs = available_variants(ctx.root());
      if (vs.empty()) throw PreconditionError("evaluate requires at least one checkpoint (run train-teacher first)");
      for_selected(vs, cfg.variant, [&](const std::string& v) { add(evaluate_one(ctx, v)); });
      break;
    }
    case Stage::bench: {
      auto vs = e.bench.variants;
      if (vs.empty()) {
        for (const auto& v : available_variants(ctx.root()))
          if (fs::exists(ctx.root() / "eval" / v / kManifest)) vs.push_back(v);
      }
      if (vs.empty()) throw PreconditionError("bench requires evaluated variants (run evaluate first)");
      for_selected(vs, cfg.variant, [&](const std::string& v) { add(bench_one(ctx, v)); });
      break;
    }
    case Stage::report:
      add(report_stage(ctx));
      break;
  }
  return result;
}

}  // namespace distillkit::pipeline
