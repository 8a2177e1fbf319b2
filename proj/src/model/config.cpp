#include "distillkit/model/config.hpp"

#include "distillkit/errors.hpp"

namespace distillkit::model {

void ModelConfig::validate() const {
  auto positive = [&](int v, const char* field) {
    if (v <= 0) throw ConfigError(std::string("model config '") + name + "': " + field + " must be positive");
  };
  positive(d_model, "d_model");
  positive(d_ff, "d_ff");
  positive(layers, "layers");
  positive(heads, "heads");
  positive(unique_layers, "unique_layers");
  positive(max_positions, "max_positions");
  if (d_model % heads != 0) {
    throw ConfigError("model config '" + name + "': d_model " + std::to_string(d_model) +
                      " is not divisible by heads " + std::to_string(heads));
  }
  if (layers % unique_layers != 0) {
    throw ConfigError("model config '" + name + "': unique_layers " + std::to_string(unique_layers) +
                      " does not divide layers " + std::to_string(layers));
  }
  if (vocab_src < 4 || vocab_tgt < 4) {
    throw ConfigError("model config '" + name + "': vocabularies need at least the 4 reserved tokens");
  }
}

void AdapterConfig::validate() const {
  if (group.empty()) throw ConfigError("adapter group must be non-empty");
  if (bottleneck < 1) throw ConfigError("adapter bottleneck must be at least 1");
  if (!(adapter_dropout >= 0.0 && adapter_dropout < 1.0)) throw ConfigError("adapter dropout outside [0, 1)");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"name", c.name},
                     {"d_model", c.d_model},
                     {"d_ff", c.d_ff},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"unique_layers", c.unique_layers},
                     {"vocab_src", c.vocab_src},
                     {"vocab_tgt", c.vocab_tgt},
                     {"max_positions", c.max_positions},
                     {"pre_norm", c.pre_norm},
                     {"embed_layernorm", c.embed_layernorm}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.name = j.value("name", d.name);
  c.d_model = j.value("d_model", d.d_model);
  c.d_ff = j.value("d_ff", d.d_ff);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.unique_layers = j.value("unique_layers", c.layers);
  c.vocab_src = j.value("vocab_src", d.vocab_src);
  c.vocab_tgt = j.value("vocab_tgt", d.vocab_tgt);
  c.max_positions = j.value("max_positions", d.max_positions);
  c.pre_norm = j.value("pre_norm", d.pre_norm);
  c.embed_layernorm = j.value("embed_layernorm", d.embed_layernorm);
}

void to_json(nlohmann::json& j, const AdapterConfig& c) {
  j = nlohmann::json{{"group", c.group}, {"bottleneck", c.bottleneck}, {"adapter_dropout", c.adapter_dropout}};
}

void from_json(const nlohmann::json& j, AdapterConfig& c) {
  AdapterConfig d;
  c.group = j.value("group", d.group);
  c.bottleneck = j.value("bottleneck", d.bottleneck);
  c.adapter_dropout = j.value("adapter_dropout", d.adapter_dropout);
}

std::vector<ModelConfig> full_scale_configs() {
  auto row = [](const char* name, int d, int ff, int layers, int heads, int unique) {
    ModelConfig c;
    c.name = name;
    c.d_model = d;
    c.d_ff = ff;
    c.layers = layers;
    c.heads = heads;
    c.unique_layers = unique;
    c.vocab_src = 32000;
    c.vocab_tgt = 32000;
    c.max_positions = 1024;
    return c;
  };
  return {row("base", 512, 2048, 6, 8, 6),        row("base12L", 512, 2048, 12, 8, 12),
          row("base18L", 512, 2048, 18, 8, 18),   row("base24L", 512, 2048, 24, 8, 24),
          row("big", 1024, 4096, 6, 16, 6),       row("huge_RS", 1536, 4096, 6, 16, 1),
          row("huge", 1536, 4096, 6, 16, 6)};
}

ModelConfig full_scale_config(const std::string& name) {
  for (auto& c : full_scale_configs()) {
    if (c.name == name) return c;
  }
  throw ConfigError("unknown model preset '" + name + "'");
}

namespace {

std::int64_t attention_params(std::int64_t d) { return 4 * (d * d + d); }
std::int64_t ffn_params(std::int64_t d, std::int64_t ff) { return d * ff + ff + ff * d + d; }
std::int64_t norm_params(std::int64_t d) { return 2 * d; }

}  // namespace

std::int64_t encoder_layer_params(const ModelConfig& cfg) {
  const std::int64_t d = cfg.d_model;
  return attention_params(d) + ffn_params(d, cfg.d_ff) + 2 * norm_params(d);
}

std::int64_t decoder_layer_params(const ModelConfig& cfg) {
  const std::int64_t d = cfg.d_model;
  return 2 * attention_params(d) + ffn_params(d, cfg.d_ff) + 3 * norm_params(d);
}

std::int64_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  const std::int64_t d = cfg.d_model;
  std::int64_t total = 0;
  total += static_cast<std::int64_t>(cfg.vocab_src) * d + static_cast<std::int64_t>(cfg.vocab_tgt) * d;
  total += 2 * static_cast<std::int64_t>(cfg.max_positions) * d;
  if (cfg.embed_layernorm) total += 2 * norm_params(d);
  if (cfg.pre_norm) total += 2 * norm_params(d);
  total += cfg.unique_layers * (encoder_layer_params(cfg) + decoder_layer_params(cfg));
  total += d * cfg.vocab_tgt + cfg.vocab_tgt;
  return total;
}

std::int64_t adapter_params(int d_model, int bottleneck) {
  const std::int64_t d = d_model, b = bottleneck;
  return d * b + b + b * d + d + norm_params(d);
}

std::int64_t count_adapter_params(const ModelConfig& cfg, const AdapterConfig& acfg) {
  return 2 * static_cast<std::int64_t>(cfg.layers) * adapter_params(cfg.d_model, acfg.bottleneck);
}

}  // namespace distillkit::model
