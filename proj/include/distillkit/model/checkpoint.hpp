#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "distillkit/model/transformer.hpp"
#include "distillkit/numerics/optim.hpp"

namespace distillkit::model {

// Binary container, little-endian:
//   "DKCKPT\0\0", u32 version,
//   u64 length + header JSON (model config, adapter configs, step, extra),
//   u64 tensor count, then per tensor: u32 name length, name, u8 trainable,
//   u32 rank, i64 extents, f64 values,
//   u64 moment count, then per entry: u32 name length, name, f64 m values,
//   f64 v values (lengths equal the tensor's).
// Equal models and states serialize to identical bytes.
std::string serialize_checkpoint(const Model& model, const numerics::AdamState* state, std::int64_t step,
                                 const nlohmann::json& extra = nlohmann::json::object());

struct LoadedCheckpoint {
  Model model;
  numerics::AdamState state;
  std::int64_t step = 0;
  nlohmann::json extra;
};

LoadedCheckpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& model, const numerics::AdamState* state,
                     std::int64_t step, const nlohmann::json& extra = nlohmann::json::object());

// Throws PreconditionError when the file is missing.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace distillkit::model
