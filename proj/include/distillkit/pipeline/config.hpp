#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distillkit/corpus/hq_filter.hpp"
#include "distillkit/corpus/types.hpp"
#include "distillkit/distill/plan.hpp"
#include "distillkit/model/config.hpp"
#include "distillkit/pipeline/trainer.hpp"

namespace distillkit::pipeline {

enum class Stage {
  gen_data,
  train_teacher,
  distill_data,
  train_student,
  hq_filter,
  finetune_hq,
  adapter_finetune,
  evaluate,
  bench,
  report
};

std::string to_string(Stage stage);
Stage stage_from_string(const std::string& s);
const std::vector<Stage>& all_stages();

// Full-scale training values, kept as named constants; desk runs scale them.
inline constexpr double kFullBaseLr = 5e-4;
inline constexpr double kFullFinetuneLr = 3e-5;
inline constexpr int kFullBatchTokens = 64000;
inline constexpr int kFullFinetuneBatchTokens = 24000;
inline constexpr double kFullAdapterLr = 1e-3;
inline constexpr int kFullAdapterWarmup = 4000;

struct DataConfig {
  // Language specs from the built-in table with pair counts set per language.
  std::vector<corpus::LanguageSpec> languages;
  std::int64_t dev_per_language = 40;
  std::int64_t test_per_language = 40;
  int vocab_src = 600;
  int vocab_tgt = 200;
};

struct TrainingConfig {
  TrainerOptions trainer;
};

struct StudentConfig {
  std::string name;
  model::ModelConfig model;
  distill::DistillPlan plan;
  TrainingConfig training;
  // Training corpus relative to the run directory; derived from the plan
  // when empty.
  std::string corpus;
};

// Continued training on the HQ subset.
struct FinetuneProfile {
  // Multiplies the student's base lr; 3e-5 / 5e-4 by default.
  double lr_scale = kFullFinetuneLr / kFullBaseLr;
  // Multiplies the student's batch tokens; 24K / 64K by default.
  double batch_scale = static_cast<double>(kFullFinetuneBatchTokens) / kFullBatchTokens;
  int warmup_steps = 1;
  std::int64_t max_updates = 200;
  int eval_interval = 50;
  int patience = 5;
  std::vector<std::string> students;

  void validate() const;
};

struct AdapterProfile {
  std::string student;
  std::vector<std::string> groups;
  int bottleneck = 16;
  double dropout = 0.1;
  double lr = kFullAdapterLr;
  int warmup_steps = 100;
  // Per-group warmup overrides.
  std::map<std::string, int> warmup_overrides;
  std::int64_t max_updates = 200;
  int eval_interval = 50;
  int patience = 5;
  int batch_tokens = 1000;

  void validate() const;
};

struct DistillStageConfig {
  int beam = 5;
  double length_penalty = 1.0;
  int batch_size = 32;
};

struct EvalConfig {
  int beam = 5;
  double length_penalty = 1.0;
  int batch_size = 32;
};

struct BenchConfig {
  int batch_size = 64;
  int repeats = 5;
  int warmup = 1;
  int beam = 5;
  // Variant names; empty means every evaluated variant.
  std::vector<std::string> variants;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  DataConfig data;
  model::ModelConfig teacher_model;
  TrainingConfig teacher_training;
  std::vector<StudentConfig> students;
  DistillStageConfig distill;
  corpus::FilterPolicy hq;
  FinetuneProfile finetune;
  AdapterProfile adapters;
  EvalConfig eval;
  BenchConfig bench;
  // Section texts as given, used for fingerprints.
  nlohmann::json raw;

  const StudentConfig& student(const std::string& name) const;
};

// Parses and validates; throws ConfigError naming the offending field.
ExperimentConfig parse_experiment(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

struct StageConfig {
  Stage stage = Stage::gen_data;
  ExperimentConfig experiment;
  std::filesystem::path out_dir = "run";
  // Restricts per-variant stages to one variant when set.
  std::optional<std::string> variant;
};

}  // namespace distillkit::pipeline
