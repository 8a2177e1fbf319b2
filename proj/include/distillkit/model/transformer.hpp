#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distillkit/model/config.hpp"
#include "distillkit/numerics/optim.hpp"
#include "distillkit/numerics/rng.hpp"
#include "distillkit/numerics/tensor.hpp"

namespace distillkit::model {

using numerics::NamedParameter;
using numerics::Tensor;

// Padded id matrices for one training batch. Sources end with eos; decoder
// inputs start with bos; decoder outputs end with eos.
struct Batch {
  int size = 0;
  int src_len = 0;
  int tgt_len = 0;
  std::vector<int> src;
  std::vector<int> tgt_in;
  std::vector<int> tgt_out;
  std::vector<std::string> languages;

  std::int64_t target_tokens() const;
};

Batch make_batch(const std::vector<std::vector<int>>& sources, const std::vector<std::vector<int>>& targets,
                 std::vector<std::string> languages = {});

// Pads id sequences (eos appended) into a [count, max_len] matrix.
std::vector<int> pad_sources(const std::vector<std::vector<int>>& sources, int& max_len);

struct EncoderOutput {
  Tensor memory;  // [batch * src_len, d_model]
  std::vector<std::uint8_t> valid;
  int batch = 0;
  int src_len = 0;
};

struct AttentionParams {
  Tensor q_w, q_b, k_w, k_b, v_w, v_b, out_w, out_b;
};

struct NormParams {
  Tensor weight, bias;
};

struct EncoderLayerParams {
  AttentionParams self_attn;
  NormParams self_attn_norm;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;
  NormParams final_norm;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  NormParams self_attn_norm;
  AttentionParams cross_attn;
  NormParams cross_attn_norm;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;
  NormParams final_norm;
};

struct AdapterParams {
  NormParams norm;
  Tensor down_w, down_b, up_w, up_b;
};

struct AdapterSet {
  AdapterConfig config;
  std::vector<AdapterParams> encoder;  // one per layer application
  std::vector<AdapterParams> decoder;
};

// Transformer encoder-decoder. Parameters are shared handles, so the model is
// move-only; snapshot/restore copy values.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return cfg_; }

  // Dropout is active only in training mode.
  void set_training(bool training, double dropout = 0.0);
  bool training() const { return training_; }
  void reseed_dropout(std::uint64_t seed) { dropout_rng_ = numerics::Rng(seed); }

  // Unique tensors in registration order, adapters last.
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<NamedParameter> trainable_parameters() const;
  Tensor parameter(const std::string& name) const;
  std::int64_t parameter_count(bool include_adapters = false) const;
  std::int64_t trainable_parameter_count() const;

  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

  EncoderOutput encode(std::span<const int> src, int batch, int src_len) const;
  // Logits [batch * tgt_len, vocab_tgt].
  Tensor decode(const EncoderOutput& enc, std::span<const int> tgt_in, int tgt_len) const;
  Tensor forward(const Batch& batch) const;

  // Stages of encode, exposed for manual layer application.
  Tensor embed_source(std::span<const int> src, int batch, int src_len) const;
  Tensor encoder_layer(int index, const Tensor& x, std::span<const std::uint8_t> valid, int batch,
                       int src_len) const;
  Tensor encoder_final(const Tensor& x) const;
  // Parameter set used by layer application `index`.
  int unique_index(int index) const { return index / (cfg_.layers / cfg_.unique_layers); }

  // Adds zero-initialized adapters for acfg.group after every layer
  // application. Throws Error if the group already has adapters.
  void insert_adapters(const AdapterConfig& acfg, std::uint64_t seed);
  bool has_adapters(const std::string& group) const { return adapters_.count(group) > 0; }
  std::vector<std::string> adapter_groups() const;
  const AdapterConfig& adapter_config(const std::string& group) const { return adapters_.at(group).config; }
  // Adapters of the active group run in every forward; none when empty.
  void set_active_adapter(std::optional<std::string> group);
  const std::optional<std::string>& active_adapter() const { return active_adapter_; }
  // Marks every non-adapter parameter as not requiring a gradient.
  void freeze_base();

  const std::vector<EncoderLayerParams>& encoder_layers() const { return enc_layers_; }
  const std::vector<DecoderLayerParams>& decoder_layers() const { return dec_layers_; }

  // Building blocks shared with the incremental decoder.
  Tensor apply_norm(const NormParams& p, const Tensor& x) const;
  Tensor apply_dropout(const Tensor& x, double p) const;
  Tensor apply_adapter(bool encoder_side, int index, const Tensor& x) const;
  Tensor embed_target(std::span<const int> ids, std::span<const int> positions) const;
  Tensor output_logits(const Tensor& h) const;
  Tensor ffn(const Tensor& x, const Tensor& fc1_w, const Tensor& fc1_b, const Tensor& fc2_w,
             const Tensor& fc2_b) const;
  double dropout() const { return training_ ? dropout_ : 0.0; }

 private:
  Tensor add_param(const std::string& name, numerics::Shape shape, const std::string& init, std::uint64_t seed);
  NormParams add_norm(const std::string& prefix, std::uint64_t seed);
  AttentionParams add_attention(const std::string& prefix, std::uint64_t seed);
  Tensor attend(const AttentionParams& p, const Tensor& query_in, const Tensor& kv_in, int batch, int q_len,
                int k_len, std::span<const std::uint8_t> key_valid, bool causal) const;
  Tensor decoder_layer(int index, const Tensor& x, const EncoderOutput& enc, std::span<const std::uint8_t> tgt_valid,
                       int tgt_len) const;

  ModelConfig cfg_;
  std::vector<NamedParameter> params_;
  std::size_t base_param_count_ = 0;

  Tensor src_embed_, tgt_embed_, src_pos_, tgt_pos_;
  NormParams src_embed_norm_, tgt_embed_norm_, enc_final_norm_, dec_final_norm_;
  std::vector<EncoderLayerParams> enc_layers_;
  std::vector<DecoderLayerParams> dec_layers_;
  Tensor out_w_, out_b_;

  std::map<std::string, AdapterSet> adapters_;
  std::optional<std::string> active_adapter_;

  bool training_ = false;
  double dropout_ = 0.0;
  mutable numerics::Rng dropout_rng_{0};
};

}  // namespace distillkit::model
