#include "distillkit/numerics/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "distillkit/errors.hpp"

namespace distillkit::numerics {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

bool wants_grad(const detail::Node& n, std::size_t i) { return n.parents[i] && n.parents[i]->requires_grad; }

std::vector<double>& parent_grad(detail::Node& n, std::size_t i) { return n.parents[i]->ensure_grad(); }

void require_matrix(const Tensor& t, const char* what) {
  if (!t.defined() || t.ndim() != 2) throw ShapeError(std::string(what) + " expects a 2-D tensor");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MatMap(out.data(), m, n).noalias() = ConstMatMap(a.data().data(), m, k) * ConstMatMap(b.data().data(), k, n);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    ConstMatMap dy(self.grad.data(), m, n);
    if (wants_grad(self, 0)) {
      MatMap(parent_grad(self, 0).data(), m, k).noalias() +=
          dy * ConstMatMap(self.parents[1]->data.data(), k, n).transpose();
    }
    if (wants_grad(self, 1)) {
      MatMap(parent_grad(self, 1).data(), k, n).noalias() +=
          ConstMatMap(self.parents[0]->data.data(), m, k).transpose() * dy;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const auto m = x.dim(0), k = x.dim(1), n = w.dim(1);
  if (w.dim(0) != k) throw ShapeError("linear: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  const bool has_bias = b.defined();
  if (has_bias && b.numel() != n) throw ShapeError("linear: bias " + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  MatMap y(out.data(), m, n);
  y.noalias() = ConstMatMap(x.data().data(), m, k) * ConstMatMap(w.data().data(), k, n);
  if (has_bias) {
    Eigen::Map<const Eigen::RowVectorXd> bias(b.data().data(), n);
    y.rowwise() += bias;
  }
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(b);
  return Tensor::make_result({m, n}, std::move(out), std::move(parents), [m, k, n, has_bias](detail::Node& self) {
    ConstMatMap dy(self.grad.data(), m, n);
    if (wants_grad(self, 0)) {
      MatMap(parent_grad(self, 0).data(), m, k).noalias() +=
          dy * ConstMatMap(self.parents[1]->data.data(), k, n).transpose();
    }
    if (wants_grad(self, 1)) {
      MatMap(parent_grad(self, 1).data(), k, n).noalias() +=
          ConstMatMap(self.parents[0]->data.data(), m, k).transpose() * dy;
    }
    if (has_bias && wants_grad(self, 2)) {
      auto& gb = parent_grad(self, 2);
      // fixed row order keeps the reduction deterministic
      for (std::int64_t r = 0; r < m; ++r) {
        const double* row = self.grad.data() + r * n;
        for (std::int64_t c = 0; c < n; ++c) gb[c] += row[c];
      }
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(self, p)) continue;
      auto& g = parent_grad(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= s;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return Tensor::make_result({}, {total}, {a}, [](detail::Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = parent_grad(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor gelu(const Tensor& x) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double v = xd[i];
    if (!std::isfinite(v)) throw NumericDomainError("gelu: non-finite input at index " + std::to_string(i));
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    if (!wants_grad(self, 0)) return;
    const auto& xv = self.parents[0]->data;
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto m = x.rows(), d = x.cols();
  if (gamma.numel() != d || beta.numel() != d) throw ShapeError("layer_norm: parameter width mismatch");
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<double> out(xd.size());
  std::vector<double> xhat(xd.size());
  std::vector<double> rstd(static_cast<std::size_t>(m));
  for (std::int64_t r = 0; r < m; ++r) {
    const double* row = xd.data() + r * d;
    double mean = 0.0;
    for (std::int64_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::int64_t c = 0; c < d; ++c) {
      const double h = (row[c] - mean) * rs;
      xhat[r * d + c] = h;
      out[r * d + c] = gd[c] * h + bd[c];
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta},
                             [m, d, xhat = std::move(xhat), rstd = std::move(rstd)](detail::Node& self) {
                               const auto& gam = self.parents[1]->data;
                               const double* dy = self.grad.data();
                               if (wants_grad(self, 1)) {
                                 auto& gg = parent_grad(self, 1);
                                 for (std::int64_t r = 0; r < m; ++r)
                                   for (std::int64_t c = 0; c < d; ++c) gg[c] += dy[r * d + c] * xhat[r * d + c];
                               }
                               if (wants_grad(self, 2)) {
                                 auto& gb = parent_grad(self, 2);
                                 for (std::int64_t r = 0; r < m; ++r)
                                   for (std::int64_t c = 0; c < d; ++c) gb[c] += dy[r * d + c];
                               }
                               if (wants_grad(self, 0)) {
                                 auto& gx = parent_grad(self, 0);
                                 const double inv_d = 1.0 / static_cast<double>(d);
                                 for (std::int64_t r = 0; r < m; ++r) {
                                   double mean_dh = 0.0, mean_dh_h = 0.0;
                                   for (std::int64_t c = 0; c < d; ++c) {
                                     const double dh = dy[r * d + c] * gam[c];
                                     mean_dh += dh;
                                     mean_dh_h += dh * xhat[r * d + c];
                                   }
                                   mean_dh *= inv_d;
                                   mean_dh_h *= inv_d;
                                   for (std::int64_t c = 0; c < d; ++c) {
                                     const double dh = dy[r * d + c] * gam[c];
                                     gx[r * d + c] += rstd[r] * (dh - mean_dh - xhat[r * d + c] * mean_dh_h);
                                   }
                                 }
                               }
                             });
}

Tensor softmax(const Tensor& x) {
  const auto m = x.rows(), n = x.cols();
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::int64_t r = 0; r < m; ++r) {
    const double* row = xd.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < n; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::int64_t c = 0; c < n; ++c) {
      out[r * n + c] = std::exp(row[c] - mx);
      z += out[r * n + c];
    }
    for (std::int64_t c = 0; c < n; ++c) out[r * n + c] /= z;
  }
  return Tensor::make_result(x.shape(), out, {x}, [m, n, y = out](detail::Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = parent_grad(self, 0);
    for (std::int64_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::int64_t c = 0; c < n; ++c) dot += self.grad[r * n + c] * y[r * n + c];
      for (std::int64_t c = 0; c < n; ++c) g[r * n + c] += y[r * n + c] * (self.grad[r * n + c] - dot);
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "embedding");
  const auto vocab = table.dim(0), d = table.dim(1);
  const auto n = static_cast<std::int64_t>(ids.size());
  std::vector<double> out(static_cast<std::size_t>(n * d));
  auto td = table.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const int id = ids[i];
    if (id < 0 || id >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(id) + " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(td.data() + id * d, d, out.data() + i * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return Tensor::make_result({n, d}, std::move(out), {table}, [d, idv = std::move(idv)](detail::Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      double* dst = g.data() + static_cast<std::int64_t>(idv[i]) * d;
      const double* src = self.grad.data() + static_cast<std::int64_t>(i) * d;
      for (std::int64_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  auto xd = x.data();
  std::vector<double> mask(xd.size());
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    mask[i] = rng.bernoulli(p) ? 0.0 : keep_scale;
    out[i] = xd[i] * mask[i];
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](detail::Node& self) {
    if (!wants_grad(self, 0)) return;
    auto& g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape,
                 std::span<const std::uint8_t> key_valid, bool causal) {
  const int B = shape.batch, H = shape.heads, Tq = shape.query_len, Tk = shape.key_len;
  const auto d = q.cols();
  if (H <= 0 || d % H != 0) throw ShapeError("attention: width " + std::to_string(d) + " not divisible by heads");
  if (q.rows() != static_cast<std::int64_t>(B) * Tq || k.rows() != static_cast<std::int64_t>(B) * Tk ||
      v.rows() != k.rows() || k.cols() != d || v.cols() != d) {
    throw ShapeError("attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
                     shape_str(v.shape()));
  }
  if (!key_valid.empty() && key_valid.size() != static_cast<std::size_t>(B) * Tk) {
    throw ShapeError("attention: key mask length mismatch");
  }
  if (causal && Tk < Tq) throw ShapeError("attention: causal mask needs key_len >= query_len");
  const auto dh = d / H;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  const int offset = Tk - Tq;

  std::vector<double> probs(static_cast<std::size_t>(B) * H * Tq * Tk, 0.0);
  std::vector<double> out(static_cast<std::size_t>(B) * Tq * d, 0.0);
  RowMat scores(Tq, Tk);
  for (int b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      ConstStridedMap qm(q.data().data() + (static_cast<std::int64_t>(b) * Tq) * d + h * dh, Tq, dh,
                         Eigen::OuterStride<>(d));
      ConstStridedMap km(k.data().data() + (static_cast<std::int64_t>(b) * Tk) * d + h * dh, Tk, dh,
                         Eigen::OuterStride<>(d));
      ConstStridedMap vm(v.data().data() + (static_cast<std::int64_t>(b) * Tk) * d + h * dh, Tk, dh,
                         Eigen::OuterStride<>(d));
      scores.noalias() = qm * km.transpose();
      MatMap pm(probs.data() + ((static_cast<std::int64_t>(b) * H + h) * Tq) * Tk, Tq, Tk);
      for (int i = 0; i < Tq; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < Tk; ++j) {
          const bool visible = (key_valid.empty() || key_valid[b * Tk + j]) && (!causal || j <= i + offset);
          if (visible) mx = std::max(mx, scores(i, j) * scale_factor);
        }
        if (mx == -std::numeric_limits<double>::infinity()) continue;  // nothing visible: zero output row
        double z = 0.0;
        for (int j = 0; j < Tk; ++j) {
          const bool visible = (key_valid.empty() || key_valid[b * Tk + j]) && (!causal || j <= i + offset);
          const double e = visible ? std::exp(scores(i, j) * scale_factor - mx) : 0.0;
          pm(i, j) = e;
          z += e;
        }
        for (int j = 0; j < Tk; ++j) pm(i, j) /= z;
      }
      StridedMap om(out.data() + (static_cast<std::int64_t>(b) * Tq) * d + h * dh, Tq, dh, Eigen::OuterStride<>(d));
      om.noalias() = pm * vm;
    }
  }

  return Tensor::make_result(
      {static_cast<std::int64_t>(B) * Tq, d}, std::move(out), {q, k, v},
      [B, H, Tq, Tk, d, dh, scale_factor, probs = std::move(probs)](detail::Node& self) {
        const bool gq = wants_grad(self, 0), gk = wants_grad(self, 1), gv = wants_grad(self, 2);
        const auto& qd = self.parents[0]->data;
        const auto& kd = self.parents[1]->data;
        const auto& vd = self.parents[2]->data;
        double* dq = gq ? parent_grad(self, 0).data() : nullptr;
        double* dk = gk ? parent_grad(self, 1).data() : nullptr;
        double* dv = gv ? parent_grad(self, 2).data() : nullptr;
        RowMat dp(Tq, Tk);
        for (int b = 0; b < B; ++b) {
          for (int h = 0; h < H; ++h) {
            const std::int64_t qoff = (static_cast<std::int64_t>(b) * Tq) * d + h * dh;
            const std::int64_t koff = (static_cast<std::int64_t>(b) * Tk) * d + h * dh;
            ConstStridedMap dout(self.grad.data() + qoff, Tq, dh, Eigen::OuterStride<>(d));
            ConstMatMap pm(probs.data() + ((static_cast<std::int64_t>(b) * H + h) * Tq) * Tk, Tq, Tk);
            ConstStridedMap vm(vd.data() + koff, Tk, dh, Eigen::OuterStride<>(d));
            if (gv) {
              StridedMap(dv + koff, Tk, dh, Eigen::OuterStride<>(d)).noalias() += pm.transpose() * dout;
            }
            if (!gq && !gk) continue;
            dp.noalias() = dout * vm.transpose();
            for (int i = 0; i < Tq; ++i) {
              double dot = 0.0;
              for (int j = 0; j < Tk; ++j) dot += dp(i, j) * pm(i, j);
              for (int j = 0; j < Tk; ++j) dp(i, j) = pm(i, j) * (dp(i, j) - dot) * scale_factor;
            }
            if (gq) {
              ConstStridedMap km(kd.data() + koff, Tk, dh, Eigen::OuterStride<>(d));
              StridedMap(dq + qoff, Tq, dh, Eigen::OuterStride<>(d)).noalias() += dp * km;
            }
            if (gk) {
              ConstStridedMap qm(qd.data() + qoff, Tq, dh, Eigen::OuterStride<>(d));
              StridedMap(dk + koff, Tk, dh, Eigen::OuterStride<>(d)).noalias() += dp.transpose() * qm;
            }
          }
        }
      });
}

std::vector<double> log_softmax_rows(std::span<const double> logits, std::int64_t cols) {
  std::vector<double> out(logits.size());
  const auto rows = static_cast<std::int64_t>(logits.size()) / cols;
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = logits.data() + r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < cols; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) z += std::exp(row[c] - mx);
    const double lse = mx + std::log(z);
    for (std::int64_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
  }
  return out;
}

Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets, double eps, int pad_id) {
  const auto m = logits.rows(), V = logits.cols();
  if (static_cast<std::int64_t>(targets.size()) != m) throw ShapeError("label_smoothed_ce: target count mismatch");
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("label smoothing must lie in [0, 1)");
  if (V < 2) throw ShapeError("label_smoothed_ce: need at least two classes");
  const double off = eps / static_cast<double>(V - 1);
  const double on = 1.0 - eps;
  auto logp = log_softmax_rows(logits.data(), V);
  std::int64_t count = 0;
  double total = 0.0;
  for (std::int64_t r = 0; r < m; ++r) {
    const int t = targets[r];
    if (t == pad_id) continue;
    if (t < 0 || t >= V) throw ShapeError("label_smoothed_ce: target " + std::to_string(t) + " out of range");
    double row_sum = 0.0;
    for (std::int64_t c = 0; c < V; ++c) row_sum += logp[r * V + c];
    const double lt = logp[r * V + t];
    total += -(on * lt + off * (row_sum - lt));
    ++count;
  }
  if (count == 0) throw Error("empty loss support");
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<int> tv(targets.begin(), targets.end());
  return Tensor::make_result(
      {}, {total * inv}, {logits},
      [m, V, on, off, inv, pad_id, tv = std::move(tv), logp = std::move(logp)](detail::Node& self) {
        if (!wants_grad(self, 0)) return;
        auto& g = parent_grad(self, 0);
        const double s = self.grad[0] * inv;
        for (std::int64_t r = 0; r < m; ++r) {
          const int t = tv[r];
          if (t == pad_id) continue;
          for (std::int64_t c = 0; c < V; ++c) {
            const double target_mass = c == t ? on : off;
            g[r * V + c] += s * (std::exp(logp[r * V + c]) - target_mass);
          }
        }
      });
}

Tensor kl_div(const Tensor& teacher_logits, const Tensor& student_logits, std::span<const std::uint8_t> valid,
              double temperature) {
  if (teacher_logits.shape() != student_logits.shape()) {
    throw ShapeError("kl_div: teacher " + shape_str(teacher_logits.shape()) + " vs student " +
                     shape_str(student_logits.shape()));
  }
  if (!(temperature > 0.0)) throw ConfigError("kl_div: temperature must be positive");
  const auto m = student_logits.rows(), V = student_logits.cols();
  if (static_cast<std::int64_t>(valid.size()) != m) throw ShapeError("kl_div: mask length mismatch");
  std::vector<double> ts(teacher_logits.data().begin(), teacher_logits.data().end());
  std::vector<double> ss(student_logits.data().begin(), student_logits.data().end());
  for (auto& v : ts) v /= temperature;
  for (auto& v : ss) v /= temperature;
  auto logp = log_softmax_rows(ts, V);
  auto logq = log_softmax_rows(ss, V);
  std::int64_t count = 0;
  double total = 0.0;
  for (std::int64_t r = 0; r < m; ++r) {
    if (!valid[r]) continue;
    double row = 0.0;
    for (std::int64_t c = 0; c < V; ++c) {
      const double p = std::exp(logp[r * V + c]);
      if (p > 0.0) row += p * (logp[r * V + c] - logq[r * V + c]);
    }
    total += row;
    ++count;
  }
  if (count == 0) throw Error("empty loss support");
  const double inv = 1.0 / static_cast<double>(count);
  std::vector<std::uint8_t> mask(valid.begin(), valid.end());
  return Tensor::make_result(
      {}, {total * inv}, {student_logits},
      [m, V, inv, temperature, mask = std::move(mask), logp = std::move(logp), logq = std::move(logq)](
          detail::Node& self) {
        if (!wants_grad(self, 0)) return;
        auto& g = parent_grad(self, 0);
        const double s = self.grad[0] * inv / temperature;
        for (std::int64_t r = 0; r < m; ++r) {
          if (!mask[r]) continue;
          for (std::int64_t c = 0; c < V; ++c) {
            g[r * V + c] += s * (std::exp(logq[r * V + c]) - std::exp(logp[r * V + c]));
          }
        }
      });
}

std::vector<double> row_nll(const Tensor& logits, std::span<const int> targets, int pad_id) {
  const auto m = logits.rows(), V = logits.cols();
  if (static_cast<std::int64_t>(targets.size()) != m) throw ShapeError("row_nll: target count mismatch");
  auto logp = log_softmax_rows(logits.data(), V);
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  for (std::int64_t r = 0; r < m; ++r) {
    if (targets[r] == pad_id) continue;
    out[r] = -logp[r * V + targets[r]];
  }
  return out;
}

}  // namespace distillkit::numerics
