#include "distillkit/pipeline/artifacts.hpp"

#include <openssl/sha.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "distillkit/errors.hpp"

namespace distillkit::pipeline {

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char c : digest) {
    out.push_back(hex[c >> 4]);
    out.push_back(hex[c & 15]);
  }
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("missing file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

void atomic_write(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

bool deterministic_mode() {
  const char* v = std::getenv("DISTILLKIT_DETERMINISTIC");
  return v == nullptr || std::string(v) != "0";
}

std::string Manifest::compute_fingerprint(const std::string& stage, std::uint64_t seed, const nlohmann::json& config,
                                          const std::map<std::string, std::string>& inputs) {
  nlohmann::json j;
  j["stage"] = stage;
  j["seed"] = seed;
  j["config"] = config;
  j["inputs"] = inputs;
  return sha256_hex(j.dump());
}

nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json j;
  j["stage"] = m.stage;
  j["seed"] = m.seed;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["fingerprint"] = m.fingerprint;
  j["info"] = m.info;
  return j;
}

Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  m.stage = j.at("stage").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config = j.at("config");
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
  m.fingerprint = j.at("fingerprint").get<std::string>();
  m.info = j.value("info", nlohmann::json::object());
  if (m.info.is_null()) m.info = nlohmann::json::object();
  return m;
}

StageDir::StageDir(fs::path final_path) : final_(std::move(final_path)) {
  tmp_ = final_;
  tmp_ += ".tmp";
  fs::remove_all(tmp_);
  fs::create_directories(tmp_);
}

StageDir::~StageDir() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(tmp_, ec);
  }
}

void StageDir::commit() {
  fs::path old = final_;
  old += ".old";
  fs::remove_all(old);
  if (fs::exists(final_)) fs::rename(final_, old);
  fs::rename(tmp_, final_);
  fs::remove_all(old);
  committed_ = true;
}

}  // namespace distillkit::pipeline
