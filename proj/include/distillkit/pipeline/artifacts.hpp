#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace distillkit::pipeline {

namespace fs = std::filesystem;

std::string sha256_hex(const std::string& bytes);
// Throws PreconditionError when the file is missing.
std::string sha256_file(const fs::path& path);

std::string read_file(const fs::path& path);
// Writes through a sibling temporary file and a rename.
void atomic_write(const fs::path& path, const std::string& bytes);

// True unless DISTILLKIT_DETERMINISTIC is set to "0": deterministic runs keep
// wall-clock data (timestamps, durations, latency) out of primary outputs.
bool deterministic_mode();

// Record of one stage run. The fingerprint hashes stage, seed, config and
// input hashes, so equal fingerprints mean equal declared inputs.
struct Manifest {
  std::string stage;
  std::uint64_t seed = 0;
  nlohmann::json config;
  // Paths relative to the run directory.
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
  std::string fingerprint;
  nlohmann::json info = nlohmann::json::object();

  static std::string compute_fingerprint(const std::string& stage, std::uint64_t seed, const nlohmann::json& config,
                                         const std::map<std::string, std::string>& inputs);
};

nlohmann::json manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);

// Stage output directory populated under a temporary name and swapped into
// place by commit(); an uncommitted directory is removed on destruction.
class StageDir {
 public:
  explicit StageDir(fs::path final_path);
  ~StageDir();
  StageDir(const StageDir&) = delete;
  StageDir& operator=(const StageDir&) = delete;

  const fs::path& path() const { return tmp_; }
  fs::path operator/(const std::string& name) const { return tmp_ / name; }
  void commit();

 private:
  fs::path final_;
  fs::path tmp_;
  bool committed_ = false;
};

}  // namespace distillkit::pipeline
