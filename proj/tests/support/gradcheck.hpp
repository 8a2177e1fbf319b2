#pragma once

// Central finite-difference gradient checks. Test-only; shares nothing with the
// reverse-mode path except the forward computation being differentiated.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "distillkit/numerics/rng.hpp"
#include "distillkit/numerics/tensor.hpp"

namespace distillkit::testing {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;
};

// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6)
// per tensor, over at most `max_entries` sampled entries of each tensor. The
// floor keeps identically-zero gradients (e.g. key biases under softmax) from
// comparing rounding noise with rounding noise.
inline GradCheckReport grad_check(const std::function<numerics::Tensor()>& loss_fn,
                                  std::vector<std::pair<std::string, numerics::Tensor>> params, double h = 1e-4,
                                  std::size_t max_entries = 0, std::uint64_t seed = 7) {
  for (auto& [name, t] : params) t.zero_grad();
  numerics::Tensor loss = loss_fn();
  loss.backward();

  GradCheckReport report;
  numerics::Rng rng(seed);
  for (auto& [name, t] : params) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(t.numel()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_entries && idx.size() > max_entries) {
      rng.shuffle(std::span<std::size_t>(idx));
      idx.resize(max_entries);
    }
    std::vector<double> analytic;
    if (t.has_grad()) {
      auto g = t.grad();
      for (auto i : idx) analytic.push_back(g[i]);
    } else {
      analytic.assign(idx.size(), 0.0);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    auto data = t.data();
    numerics::NoGradGuard no_grad;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double orig = data[idx[k]];
      data[idx[k]] = orig + h;
      const double up = loss_fn().item();
      data[idx[k]] = orig - h;
      const double down = loss_fn().item();
      data[idx[k]] = orig;
      const double numeric = (up - down) / (2 * h);
      diff += (analytic[k] - numeric) * (analytic[k] - numeric);
      na += analytic[k] * analytic[k];
      nn += numeric * numeric;
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-6});
    const double rel = std::sqrt(diff) / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = name;
    }
  }
  return report;
}

inline numerics::Tensor random_tensor(numerics::Shape shape, numerics::Rng& rng, double scale = 1.0,
                                      bool requires_grad = true) {
  auto n = numerics::shape_numel(shape);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return numerics::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace distillkit::testing
