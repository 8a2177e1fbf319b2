#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "distillkit/numerics/tensor.hpp"

namespace distillkit::numerics {

// Training hyperparameters. Defaults are the full-scale values; desk-scale
// runs override batch size and warmup through the pipeline config.
struct OptimizerConfig {
  double base_lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  int warmup_steps = 4000;
  double max_grad_norm = 1.0;
  double label_smoothing = 0.1;
  double dropout = 0.2;
  double adam_eps = 1e-8;

  // Throws ConfigError when a field is outside its valid range.
  void validate() const;
};

// Linear warmup to base_lr, then inverse-square-root decay.
double lr_at(std::int64_t step, const OptimizerConfig& cfg);

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

// First and second moments keyed by position in the parameter list.
struct AdamState {
  std::vector<std::string> names;
  std::vector<AdamMoments> moments;

  void ensure(std::span<const NamedParameter> params);
};

// Scales every gradient in place so the global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(std::span<const std::span<double>> grads, double max_norm);
double clip_grad_norm(std::span<const NamedParameter> params, double max_norm);

// One bias-corrected Adam update at lr_at(step). Parameters that do not
// require a gradient are left untouched. A non-finite gradient raises
// NumericDomainError naming the parameter.
void adam_step(std::span<const NamedParameter> params, AdamState& state, const OptimizerConfig& cfg,
               std::int64_t step);

}  // namespace distillkit::numerics
