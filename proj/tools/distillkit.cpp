#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "distillkit/errors.hpp"
#include "distillkit/pipeline/stages.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitPrecondition = 2;
constexpr int kExitDivergence = 3;

}  // namespace

int main(int argc, char** argv) {
  using namespace distillkit;
  CLI::App app{"distillkit: knowledge distillation toolkit for multilingual translation"};
  std::string stage_name;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "run";
  std::optional<std::string> variant;
  bool force = false;
  bool verbose = false;
  std::string stages_help = "stage to run: all";
  for (auto s : pipeline::all_stages()) stages_help += ", " + pipeline::to_string(s);
  app.add_option("stage", stage_name, stages_help);
  app.add_option("--config", config_path, "experiment config (JSON)")->required();
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out_dir, "run directory")->capture_default_str();
  app.add_option("--variant", variant, "restrict per-variant stages to one student, group or variant");
  app.add_flag("--force", force, "rerun even when outputs are up to date");
  app.add_flag("-v,--verbose", verbose, "debug logging");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    pipeline::StageConfig cfg;
    cfg.experiment = pipeline::load_experiment(config_path);
    if (seed) cfg.experiment.seed = *seed;
    if (stage_name.empty()) stage_name = cfg.experiment.raw.value("stage", std::string());
    if (stage_name.empty()) throw ConfigError("no stage given on the command line or in the config");
    cfg.out_dir = out_dir;
    cfg.variant = variant;
    std::vector<pipeline::Stage> stages;
    if (stage_name == "all") {
      stages = pipeline::all_stages();
    } else {
      stages.push_back(pipeline::stage_from_string(stage_name));
    }
    for (auto s : stages) {
      if (stage_name == "all") {
        if (s == pipeline::Stage::finetune_hq && cfg.experiment.finetune.students.empty()) {
          bool any = false;
          for (const auto& st : cfg.experiment.students) any = any || st.plan.uses_distilled_targets();
          if (!any) continue;
        }
        if (s == pipeline::Stage::adapter_finetune && cfg.experiment.adapters.groups.empty()) continue;
        if (s == pipeline::Stage::train_student && cfg.experiment.students.empty()) continue;
      }
      cfg.stage = s;
      pipeline::run_stage(cfg, {force});
    }
  } catch (const PreconditionError& e) {
    spdlog::error("{}", e.what());
    return kExitPrecondition;
  } catch (const ConfigError& e) {
    spdlog::error("{}", e.what());
    return kExitPrecondition;
  } catch (const DivergenceError& e) {
    spdlog::error("{}", e.what());
    return kExitDivergence;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
  return kExitOk;
}
