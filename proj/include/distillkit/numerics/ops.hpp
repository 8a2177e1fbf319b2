#pragma once

#include <cstdint>
#include <span>

#include "distillkit/numerics/rng.hpp"
#include "distillkit/numerics/tensor.hpp"

namespace distillkit::numerics {

// All matrix ops treat tensors as [rows, cols] in row-major order.

Tensor matmul(const Tensor& a, const Tensor& b);

// x[m,k] * w[k,n] + b[n]; `b` may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);

// x * Phi(x) with the exact erf form of the normal CDF.
// Throws NumericDomainError on non-finite input.
Tensor gelu(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Row-wise softmax over the last dimension.
Tensor softmax(const Tensor& x);

// Rows of `table` selected by `ids`: result is [ids.size(), table.cols()].
Tensor embedding(const Tensor& table, std::span<const int> ids);

// Inverted dropout; identity when p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng);

struct AttentionShape {
  int batch = 1;
  int heads = 1;
  int query_len = 1;
  int key_len = 1;
};

// Scaled dot-product attention over `heads` column groups.
// q is [batch*query_len, d]; k and v are [batch*key_len, d].
// `key_valid` (empty or batch*key_len entries) masks padded keys.
// With `causal`, query i may see key j iff j <= i + (key_len - query_len).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape,
                 std::span<const std::uint8_t> key_valid, bool causal);

// Mean over non-pad rows of the cross-entropy against the smoothed target
// distribution (1 - eps on the target, eps / (V - 1) elsewhere).
// Throws Error("empty loss support") if every target is pad.
Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets, double eps, int pad_id);

// Mean over valid rows of KL(softmax(teacher / T) || softmax(student / T)).
// The teacher side is treated as a constant. Throws on shape mismatch and on
// an empty mask.
Tensor kl_div(const Tensor& teacher_logits, const Tensor& student_logits,
              std::span<const std::uint8_t> valid, double temperature = 1.0);

// Row-wise log-softmax of plain values (no graph).
std::vector<double> log_softmax_rows(std::span<const double> logits, std::int64_t cols);

// Negative log-likelihood of each row's target (no graph); pad rows get 0.
std::vector<double> row_nll(const Tensor& logits, std::span<const int> targets, int pad_id);

}  // namespace distillkit::numerics
