#include "distillkit/model/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "distillkit/errors.hpp"
#include "distillkit/numerics/ops.hpp"

namespace distillkit::model {

using namespace numerics;

namespace {

constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;

std::vector<int> positions(int batch, int len) {
  std::vector<int> out(static_cast<std::size_t>(batch) * len);
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < len; ++t) out[static_cast<std::size_t>(b) * len + t] = t;
  }
  return out;
}

std::vector<std::uint8_t> non_pad(std::span<const int> ids) {
  std::vector<std::uint8_t> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = ids[i] != kPad;
  return out;
}

double normal(Rng& rng) {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u = 1.0 - rng.uniform();
  const double v = rng.uniform();
  return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * v);
}

}  // namespace

std::int64_t Batch::target_tokens() const {
  return std::count_if(tgt_out.begin(), tgt_out.end(), [](int t) { return t != kPad; });
}

std::vector<int> pad_sources(const std::vector<std::vector<int>>& sources, int& max_len) {
  max_len = 0;
  for (const auto& s : sources) max_len = std::max(max_len, static_cast<int>(s.size()) + 1);
  std::vector<int> out(sources.size() * static_cast<std::size_t>(max_len), kPad);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    std::copy(sources[i].begin(), sources[i].end(), out.begin() + static_cast<std::ptrdiff_t>(i * max_len));
    out[i * max_len + sources[i].size()] = kEos;
  }
  return out;
}

Batch make_batch(const std::vector<std::vector<int>>& sources, const std::vector<std::vector<int>>& targets,
                 std::vector<std::string> languages) {
  if (sources.size() != targets.size()) throw ShapeError("make_batch: source and target counts differ");
  if (!languages.empty() && languages.size() != sources.size()) {
    throw ShapeError("make_batch: language count differs from batch size");
  }
  Batch b;
  b.size = static_cast<int>(sources.size());
  b.src = pad_sources(sources, b.src_len);
  for (const auto& t : targets) b.tgt_len = std::max(b.tgt_len, static_cast<int>(t.size()) + 1);
  b.tgt_in.assign(static_cast<std::size_t>(b.size) * b.tgt_len, kPad);
  b.tgt_out.assign(static_cast<std::size_t>(b.size) * b.tgt_len, kPad);
  for (int i = 0; i < b.size; ++i) {
    const auto& t = targets[i];
    const std::size_t row = static_cast<std::size_t>(i) * b.tgt_len;
    b.tgt_in[row] = kBos;
    std::copy(t.begin(), t.end(), b.tgt_in.begin() + static_cast<std::ptrdiff_t>(row + 1));
    std::copy(t.begin(), t.end(), b.tgt_out.begin() + static_cast<std::ptrdiff_t>(row));
    b.tgt_out[row + t.size()] = kEos;
  }
  b.languages = std::move(languages);
  return b;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  const std::int64_t d = cfg_.d_model, ff = cfg_.d_ff;
  src_embed_ = add_param("encoder.embed_tokens.weight", {cfg_.vocab_src, d}, "embed", seed);
  src_pos_ = add_param("encoder.embed_positions.weight", {cfg_.max_positions, d}, "embed", seed);
  if (cfg_.embed_layernorm) src_embed_norm_ = add_norm("encoder.layernorm_embedding", seed);
  for (int u = 0; u < cfg_.unique_layers; ++u) {
    const std::string p = "encoder.layers." + std::to_string(u) + ".";
    EncoderLayerParams l;
    l.self_attn = add_attention(p + "self_attn", seed);
    l.self_attn_norm = add_norm(p + "self_attn_layer_norm", seed);
    l.fc1_w = add_param(p + "fc1.weight", {d, ff}, "xavier", seed);
    l.fc1_b = add_param(p + "fc1.bias", {ff}, "zeros", seed);
    l.fc2_w = add_param(p + "fc2.weight", {ff, d}, "xavier", seed);
    l.fc2_b = add_param(p + "fc2.bias", {d}, "zeros", seed);
    l.final_norm = add_norm(p + "final_layer_norm", seed);
    enc_layers_.push_back(std::move(l));
  }
  if (cfg_.pre_norm) enc_final_norm_ = add_norm("encoder.layer_norm", seed);

  tgt_embed_ = add_param("decoder.embed_tokens.weight", {cfg_.vocab_tgt, d}, "embed", seed);
  tgt_pos_ = add_param("decoder.embed_positions.weight", {cfg_.max_positions, d}, "embed", seed);
  if (cfg_.embed_layernorm) tgt_embed_norm_ = add_norm("decoder.layernorm_embedding", seed);
  for (int u = 0; u < cfg_.unique_layers; ++u) {
    const std::string p = "decoder.layers." + std::to_string(u) + ".";
    DecoderLayerParams l;
    l.self_attn = add_attention(p + "self_attn", seed);
    l.self_attn_norm = add_norm(p + "self_attn_layer_norm", seed);
    l.cross_attn = add_attention(p + "encoder_attn", seed);
    l.cross_attn_norm = add_norm(p + "encoder_attn_layer_norm", seed);
    l.fc1_w = add_param(p + "fc1.weight", {d, ff}, "xavier", seed);
    l.fc1_b = add_param(p + "fc1.bias", {ff}, "zeros", seed);
    l.fc2_w = add_param(p + "fc2.weight", {ff, d}, "xavier", seed);
    l.fc2_b = add_param(p + "fc2.bias", {d}, "zeros", seed);
    l.final_norm = add_norm(p + "final_layer_norm", seed);
    dec_layers_.push_back(std::move(l));
  }
  if (cfg_.pre_norm) dec_final_norm_ = add_norm("decoder.layer_norm", seed);
  out_w_ = add_param("decoder.output_projection.weight", {d, cfg_.vocab_tgt}, "embed", seed);
  out_b_ = add_param("decoder.output_projection.bias", {cfg_.vocab_tgt}, "zeros", seed);
  base_param_count_ = params_.size();
}

Tensor Model::add_param(const std::string& name, Shape shape, const std::string& init, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  std::vector<double> data(n, 0.0);
  Rng rng = Rng(seed).fork(stable_hash(name));
  if (init == "embed") {
    const double sd = 1.0 / std::sqrt(static_cast<double>(cfg_.d_model));
    for (auto& x : data) x = sd * normal(rng);
  } else if (init == "xavier") {
    const double bound = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
    for (auto& x : data) x = rng.uniform(-bound, bound);
  } else if (init == "ones") {
    std::fill(data.begin(), data.end(), 1.0);
  } else if (init != "zeros") {
    throw Error("unknown initializer '" + init + "'");
  }
  Tensor t = Tensor::from(std::move(shape), std::move(data), true);
  params_.push_back({name, t});
  return t;
}

NormParams Model::add_norm(const std::string& prefix, std::uint64_t seed) {
  return {add_param(prefix + ".weight", {cfg_.d_model}, "ones", seed),
          add_param(prefix + ".bias", {cfg_.d_model}, "zeros", seed)};
}

AttentionParams Model::add_attention(const std::string& prefix, std::uint64_t seed) {
  const std::int64_t d = cfg_.d_model;
  AttentionParams a;
  a.q_w = add_param(prefix + ".q_proj.weight", {d, d}, "xavier", seed);
  a.q_b = add_param(prefix + ".q_proj.bias", {d}, "zeros", seed);
  a.k_w = add_param(prefix + ".k_proj.weight", {d, d}, "xavier", seed);
  a.k_b = add_param(prefix + ".k_proj.bias", {d}, "zeros", seed);
  a.v_w = add_param(prefix + ".v_proj.weight", {d, d}, "xavier", seed);
  a.v_b = add_param(prefix + ".v_proj.bias", {d}, "zeros", seed);
  a.out_w = add_param(prefix + ".out_proj.weight", {d, d}, "xavier", seed);
  a.out_b = add_param(prefix + ".out_proj.bias", {d}, "zeros", seed);
  return a;
}

void Model::set_training(bool training, double dropout) {
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout outside [0, 1)");
  training_ = training;
  dropout_ = dropout;
}

std::vector<NamedParameter> Model::trainable_parameters() const {
  std::vector<NamedParameter> out;
  for (const auto& p : params_) {
    if (p.tensor.requires_grad()) out.push_back(p);
  }
  return out;
}

Tensor Model::parameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw Error("no parameter named '" + name + "'");
}

std::int64_t Model::parameter_count(bool include_adapters) const {
  std::int64_t n = 0;
  const std::size_t end = include_adapters ? params_.size() : base_param_count_;
  for (std::size_t i = 0; i < end; ++i) n += params_[i].tensor.numel();
  return n;
}

std::int64_t Model::trainable_parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) {
    if (p.tensor.requires_grad()) n += p.tensor.numel();
  }
  return n;
}

std::vector<std::vector<double>> Model::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

void Model::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size()) throw ShapeError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].tensor.data();
    if (values[i].size() != dst.size()) throw ShapeError("restore: size mismatch for " + params_[i].name);
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

Tensor Model::apply_norm(const NormParams& p, const Tensor& x) const { return layer_norm(x, p.weight, p.bias); }

Tensor Model::apply_dropout(const Tensor& x, double p) const {
  if (!training_ || p <= 0.0) return x;
  return numerics::dropout(x, p, dropout_rng_);
}

Tensor Model::ffn(const Tensor& x, const Tensor& fc1_w, const Tensor& fc1_b, const Tensor& fc2_w,
                  const Tensor& fc2_b) const {
  return linear(gelu(linear(x, fc1_w, fc1_b)), fc2_w, fc2_b);
}

Tensor Model::attend(const AttentionParams& p, const Tensor& query_in, const Tensor& kv_in, int batch, int q_len,
                     int k_len, std::span<const std::uint8_t> key_valid, bool causal) const {
  const Tensor q = linear(query_in, p.q_w, p.q_b);
  const Tensor k = linear(kv_in, p.k_w, p.k_b);
  const Tensor v = linear(kv_in, p.v_w, p.v_b);
  const Tensor a = attention(q, k, v, {batch, cfg_.heads, q_len, k_len}, key_valid, causal);
  return linear(a, p.out_w, p.out_b);
}

Tensor Model::apply_adapter(bool encoder_side, int index, const Tensor& x) const {
  if (!active_adapter_) return x;
  const auto& set = adapters_.at(*active_adapter_);
  const auto& a = encoder_side ? set.encoder[index] : set.decoder[index];
  const Tensor h = linear(gelu(linear(apply_norm(a.norm, x), a.down_w, a.down_b)), a.up_w, a.up_b);
  return add(x, apply_dropout(h, set.config.adapter_dropout));
}

Tensor Model::embed_source(std::span<const int> src, int batch, int src_len) const {
  if (src.size() != static_cast<std::size_t>(batch) * src_len) throw ShapeError("embed_source: id count mismatch");
  if (src_len > cfg_.max_positions) {
    throw ShapeError("source length " + std::to_string(src_len) + " exceeds max_positions");
  }
  for (int id : src) {
    if (id < 0 || id >= cfg_.vocab_src) throw ShapeError("source id " + std::to_string(id) + " out of range");
  }
  const auto pos = positions(batch, src_len);
  Tensor x = add(embedding(src_embed_, src), embedding(src_pos_, pos));
  if (cfg_.embed_layernorm) x = apply_norm(src_embed_norm_, x);
  return apply_dropout(x, dropout());
}

Tensor Model::embed_target(std::span<const int> ids, std::span<const int> pos) const {
  for (int p : pos) {
    if (p >= cfg_.max_positions) throw ShapeError("target position exceeds max_positions");
  }
  for (int id : ids) {
    if (id < 0 || id >= cfg_.vocab_tgt) throw ShapeError("target id " + std::to_string(id) + " out of range");
  }
  Tensor x = add(embedding(tgt_embed_, ids), embedding(tgt_pos_, pos));
  if (cfg_.embed_layernorm) x = apply_norm(tgt_embed_norm_, x);
  return apply_dropout(x, dropout());
}

Tensor Model::encoder_layer(int index, const Tensor& x, std::span<const std::uint8_t> valid, int batch,
                            int src_len) const {
  const auto& l = enc_layers_.at(unique_index(index));
  const double p = dropout();
  Tensor h;
  if (cfg_.pre_norm) {
    const Tensor xn = apply_norm(l.self_attn_norm, x);
    h = add(x, apply_dropout(attend(l.self_attn, xn, xn, batch, src_len, src_len, valid, false), p));
    h = add(h, apply_dropout(ffn(apply_norm(l.final_norm, h), l.fc1_w, l.fc1_b, l.fc2_w, l.fc2_b), p));
  } else {
    h = apply_norm(l.self_attn_norm,
                   add(x, apply_dropout(attend(l.self_attn, x, x, batch, src_len, src_len, valid, false), p)));
    h = apply_norm(l.final_norm, add(h, apply_dropout(ffn(h, l.fc1_w, l.fc1_b, l.fc2_w, l.fc2_b), p)));
  }
  return apply_adapter(true, index, h);
}

Tensor Model::encoder_final(const Tensor& x) const {
  return cfg_.pre_norm ? apply_norm(enc_final_norm_, x) : x;
}

EncoderOutput Model::encode(std::span<const int> src, int batch, int src_len) const {
  EncoderOutput out;
  out.batch = batch;
  out.src_len = src_len;
  out.valid = non_pad(src);
  Tensor x = embed_source(src, batch, src_len);
  for (int i = 0; i < cfg_.layers; ++i) x = encoder_layer(i, x, out.valid, batch, src_len);
  out.memory = encoder_final(x);
  return out;
}

Tensor Model::decoder_layer(int index, const Tensor& x, const EncoderOutput& enc,
                            std::span<const std::uint8_t> tgt_valid, int tgt_len) const {
  const auto& l = dec_layers_.at(unique_index(index));
  const double p = dropout();
  const int B = enc.batch;
  Tensor h;
  if (cfg_.pre_norm) {
    const Tensor xn = apply_norm(l.self_attn_norm, x);
    h = add(x, apply_dropout(attend(l.self_attn, xn, xn, B, tgt_len, tgt_len, tgt_valid, true), p));
    h = add(h, apply_dropout(attend(l.cross_attn, apply_norm(l.cross_attn_norm, h), enc.memory, B, tgt_len,
                                    enc.src_len, enc.valid, false),
                             p));
    h = add(h, apply_dropout(ffn(apply_norm(l.final_norm, h), l.fc1_w, l.fc1_b, l.fc2_w, l.fc2_b), p));
  } else {
    h = apply_norm(l.self_attn_norm,
                   add(x, apply_dropout(attend(l.self_attn, x, x, B, tgt_len, tgt_len, tgt_valid, true), p)));
    h = apply_norm(l.cross_attn_norm,
                   add(h, apply_dropout(attend(l.cross_attn, h, enc.memory, B, tgt_len, enc.src_len, enc.valid,
                                               false),
                                        p)));
    h = apply_norm(l.final_norm, add(h, apply_dropout(ffn(h, l.fc1_w, l.fc1_b, l.fc2_w, l.fc2_b), p)));
  }
  return apply_adapter(false, index, h);
}

Tensor Model::output_logits(const Tensor& h) const {
  const Tensor x = cfg_.pre_norm ? apply_norm(dec_final_norm_, h) : h;
  return linear(x, out_w_, out_b_);
}

Tensor Model::decode(const EncoderOutput& enc, std::span<const int> tgt_in, int tgt_len) const {
  if (tgt_in.size() != static_cast<std::size_t>(enc.batch) * tgt_len) throw ShapeError("decode: id count mismatch");
  const auto valid = non_pad(tgt_in);
  Tensor x = embed_target(tgt_in, positions(enc.batch, tgt_len));
  for (int i = 0; i < cfg_.layers; ++i) x = decoder_layer(i, x, enc, valid, tgt_len);
  return output_logits(x);
}

Tensor Model::forward(const Batch& batch) const {
  const auto enc = encode(batch.src, batch.size, batch.src_len);
  return decode(enc, batch.tgt_in, batch.tgt_len);
}

void Model::insert_adapters(const AdapterConfig& acfg, std::uint64_t seed) {
  acfg.validate();
  if (has_adapters(acfg.group)) throw Error("adapters for group '" + acfg.group + "' already present");
  AdapterSet set;
  set.config = acfg;
  const std::int64_t d = cfg_.d_model, b = acfg.bottleneck;
  for (const char* side : {"encoder", "decoder"}) {
    for (int i = 0; i < cfg_.layers; ++i) {
      const std::string p = "adapters." + acfg.group + "." + side + "." + std::to_string(i) + ".";
      AdapterParams a;
      a.norm = add_norm(p + "layer_norm", seed);
      a.down_w = add_param(p + "down.weight", {d, b}, "xavier", seed);
      a.down_b = add_param(p + "down.bias", {b}, "zeros", seed);
      a.up_w = add_param(p + "up.weight", {b, d}, "zeros", seed);
      a.up_b = add_param(p + "up.bias", {d}, "zeros", seed);
      (std::string(side) == "encoder" ? set.encoder : set.decoder).push_back(std::move(a));
    }
  }
  adapters_.emplace(acfg.group, std::move(set));
}

std::vector<std::string> Model::adapter_groups() const {
  std::vector<std::string> out;
  for (const auto& [g, s] : adapters_) out.push_back(g);
  return out;
}

void Model::set_active_adapter(std::optional<std::string> group) {
  if (group && !has_adapters(*group)) throw Error("no adapters for group '" + *group + "'");
  active_adapter_ = std::move(group);
}

void Model::freeze_base() {
  for (std::size_t i = 0; i < base_param_count_; ++i) params_[i].tensor.set_requires_grad(false);
}

}  // namespace distillkit::model
