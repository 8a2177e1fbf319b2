#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace distillkit::model {

struct ModelConfig {
  std::string name = "base";
  int d_model = 512;
  int d_ff = 2048;
  // Layer applications per encoder and per decoder.
  int layers = 6;
  int heads = 8;
  // Distinct parameter sets per stack; 1 is recurrent stacking.
  int unique_layers = 6;
  int vocab_src = 32000;
  int vocab_tgt = 32000;
  int max_positions = 256;
  bool pre_norm = true;
  bool embed_layernorm = true;

  // Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct AdapterConfig {
  // Language id or family id the adapters serve.
  std::string group;
  int bottleneck = 256;
  double adapter_dropout = 0.1;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const AdapterConfig& c);
void from_json(const nlohmann::json& j, AdapterConfig& c);

// Full-scale architecture rows: base, base12L, base18L, base24L, big,
// huge_RS and huge, with 32000-token vocabularies and 1024 positions.
std::vector<ModelConfig> full_scale_configs();
ModelConfig full_scale_config(const std::string& name);

// Parameters of one encoder or decoder layer (attention, FFN, layer norms).
std::int64_t encoder_layer_params(const ModelConfig& cfg);
std::int64_t decoder_layer_params(const ModelConfig& cfg);

// Closed-form parameter count: source and target embeddings, learned
// positions for both sides, embedding and final layer norms, the unique layer
// blocks, and the untied output projection with bias. Excludes adapters.
std::int64_t count_params(const ModelConfig& cfg);

// One adapter: layer norm, down and up projections with biases.
std::int64_t adapter_params(int d_model, int bottleneck);

// Adapters for one group: one after every encoder and decoder layer application.
std::int64_t count_adapter_params(const ModelConfig& cfg, const AdapterConfig& acfg);

}  // namespace distillkit::model
