#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "distillkit/pipeline/config.hpp"

namespace distillkit::pipeline {

struct StageRun {
  // Output directory relative to the run directory.
  std::string unit;
  bool cached = false;
};

struct StageResult {
  Stage stage = Stage::gen_data;
  std::vector<StageRun> runs;
};

struct RunOptions {
  // Re-run even when the manifest fingerprint matches.
  bool force = false;
};

// Runs one stage into cfg.out_dir. Upstream artifacts are checked against the
// hashes their manifests recorded. Throws PreconditionError when an upstream
// stage has not run (naming it) or an artifact changed after its stage ran,
// ConfigError on invalid configuration and DivergenceError when training
// diverges (the best checkpoint so far is kept).
StageResult run_stage(const StageConfig& cfg, const RunOptions& options = {});

// Variant names with a checkpoint in the run directory: "teacher", each
// student, "<student>+hq" and "<student>+adapter-<group>".
std::vector<std::string> available_variants(const std::filesystem::path& run_dir);

// Directory (relative to the run directory) holding a variant's checkpoint.
std::string variant_dir(const std::string& variant);

}  // namespace distillkit::pipeline
