#include "distillkit/numerics/optim.hpp"

#include <cmath>

#include "distillkit/errors.hpp"

namespace distillkit::numerics {

void OptimizerConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in (0, 1)");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("label_smoothing must lie in [0, 1)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
}

double lr_at(std::int64_t step, const OptimizerConfig& cfg) {
  if (step <= 0) throw ConfigError("lr_at: step must be >= 1, got " + std::to_string(step));
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(cfg.warmup_steps);
  if (step <= cfg.warmup_steps) return cfg.base_lr * s / w;
  return cfg.base_lr * std::sqrt(w / s);
}

void AdamState::ensure(std::span<const NamedParameter> params) {
  if (names.size() == params.size()) {
    bool same = true;
    for (std::size_t i = 0; i < params.size() && same; ++i) same = names[i] == params[i].name;
    if (same) return;
  }
  // Keep moments of parameters that survive (e.g. when adapters are added).
  std::vector<std::string> new_names;
  std::vector<AdamMoments> new_moments;
  for (const auto& p : params) {
    new_names.push_back(p.name);
    AdamMoments mom;
    for (std::size_t j = 0; j < names.size(); ++j) {
      if (names[j] == p.name && moments[j].m.size() == static_cast<std::size_t>(p.tensor.numel())) {
        mom = moments[j];
        break;
      }
    }
    if (mom.m.empty()) {
      mom.m.assign(static_cast<std::size_t>(p.tensor.numel()), 0.0);
      mom.v.assign(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    }
    new_moments.push_back(std::move(mom));
  }
  names = std::move(new_names);
  moments = std::move(new_moments);
}

double clip_grad_norm(std::span<const std::span<double>> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (auto g : grads)
    for (double v : g) sq += v * v;
  const double total = std::sqrt(sq);
  // the relative slack makes a second application a no-op
  if (total > max_norm * (1.0 + 1e-12)) {
    const double coef = max_norm / total;
    for (auto g : grads)
      for (double& v : g) v *= coef;
  }
  return total;
}

double clip_grad_norm(std::span<const NamedParameter> params, double max_norm) {
  std::vector<std::span<double>> grads;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    if (t.requires_grad() && t.has_grad()) grads.push_back(t.grad());
  }
  return clip_grad_norm(grads, max_norm);
}

void adam_step(std::span<const NamedParameter> params, AdamState& state, const OptimizerConfig& cfg,
               std::int64_t step) {
  state.ensure(params);
  const double lr = lr_at(step, cfg);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    if (!t.requires_grad() || !t.has_grad()) continue;
    auto g = t.grad();
    for (double v : g) {
      if (!std::isfinite(v)) throw NumericDomainError("adam_step: non-finite gradient in parameter " + params[i].name);
    }
    auto& mom = state.moments[i];
    auto w = t.data();
    for (std::size_t j = 0; j < g.size(); ++j) {
      mom.m[j] = cfg.beta1 * mom.m[j] + (1.0 - cfg.beta1) * g[j];
      mom.v[j] = cfg.beta2 * mom.v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = mom.m[j] / bc1;
      const double vhat = mom.v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

}  // namespace distillkit::numerics
