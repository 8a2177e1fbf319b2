#include "distillkit/distill/training.hpp"

#include <cmath>

#include "distillkit/errors.hpp"
#include "distillkit/numerics/ops.hpp"

namespace distillkit::distill {

using numerics::NoGradGuard;

namespace {
constexpr int kPad = 0;

std::vector<std::uint8_t> non_pad(std::span<const int> targets) {
  std::vector<std::uint8_t> valid(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) valid[i] = targets[i] != kPad;
  return valid;
}
}  // namespace

TrainState make_train_state(const DistillPlan& plan, const std::vector<std::string>& languages) {
  TrainState s;
  s.global_queue = SelectionQueue(std::max(1, plan.queue_capacity));
  const int cap = plan.language_capacity(static_cast<int>(languages.size()));
  for (const auto& l : languages) s.language_queues.emplace(l, SelectionQueue(cap, l));
  return s;
}

nlohmann::json train_state_to_json(const TrainState& state) {
  nlohmann::json j;
  j["step"] = state.step;
  j["global_queue"] = queue_to_json(state.global_queue);
  nlohmann::json langs = nlohmann::json::object();
  for (const auto& [l, q] : state.language_queues) langs[l] = queue_to_json(q);
  j["language_queues"] = langs;
  j["dev_history"] = state.dev_history;
  return j;
}

void train_state_from_json(const nlohmann::json& j, TrainState& state) {
  state.step = j.at("step").get<std::int64_t>();
  state.global_queue = queue_from_json(j.at("global_queue"));
  state.language_queues.clear();
  for (const auto& [l, q] : j.at("language_queues").items()) state.language_queues.emplace(l, queue_from_json(q));
  state.dev_history = j.at("dev_history").get<std::vector<double>>();
}

Tensor wsld_loss(const Tensor& student_logits, const Tensor& teacher_logits, std::span<const int> targets,
                 double lambda, double label_smoothing, double temperature) {
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ShapeError("wsld_loss: student " + numerics::shape_str(student_logits.shape()) + " vs teacher " +
                     numerics::shape_str(teacher_logits.shape()));
  }
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("wsld_loss: lambda must lie in [0, 1]");
  Tensor total;
  if (lambda < 1.0) {
    total = numerics::label_smoothed_ce(student_logits, targets, label_smoothing, kPad);
    if (lambda > 0.0) total = numerics::scale(total, 1.0 - lambda);
  }
  if (lambda > 0.0) {
    auto kl = numerics::kl_div(teacher_logits, student_logits, non_pad(targets), temperature);
    if (lambda < 1.0) kl = numerics::scale(kl, lambda);
    total = total.defined() ? numerics::add(total, kl) : kl;
  }
  return total;
}

std::vector<double> sample_losses(const Tensor& logits, std::span<const int> targets, int batch, int tgt_len) {
  const auto nll = numerics::row_nll(logits, targets, kPad);
  std::vector<double> out(static_cast<std::size_t>(batch), 0.0);
  for (int b = 0; b < batch; ++b) {
    int count = 0;
    for (int t = 0; t < tgt_len; ++t) {
      const auto r = static_cast<std::size_t>(b * tgt_len + t);
      if (targets[r] == kPad) continue;
      out[static_cast<std::size_t>(b)] += nll[r];
      ++count;
    }
    if (count) out[static_cast<std::size_t>(b)] /= count;
  }
  return out;
}

LossParts distill_loss(const model::Model& student, const model::Model* teacher, const model::Batch& batch,
                       const DistillPlan& plan, TrainState& state, double label_smoothing) {
  plan.validate();
  LossParts out;
  const auto logits = student.forward(batch);
  const std::span<const int> targets(batch.tgt_out);

  if (!plan.needs_teacher()) {
    out.loss = numerics::label_smoothed_ce(logits, targets, label_smoothing, kPad);
    out.ce = out.loss.item();
    return out;
  }
  if (teacher == nullptr) throw PreconditionError("distillation mode " + to_string(plan.mode) + " requires a teacher");
  if (teacher->training()) throw PreconditionError("teacher must be in inference mode");
  Tensor teacher_logits;
  {
    NoGradGuard guard;
    teacher_logits = teacher->forward(batch);
  }

  if (!plan.selective()) {
    const double lambda = plan.mode == DistillMode::wld ? 1.0 : plan.kd_weight;
    out.loss = wsld_loss(logits, teacher_logits, targets, lambda, label_smoothing, plan.temperature);
    {
      NoGradGuard guard;
      out.ce = numerics::label_smoothed_ce(logits, targets, label_smoothing, kPad).item();
      out.kd = numerics::kl_div(teacher_logits, logits, non_pad(targets), plan.temperature).item();
    }
    return out;
  }

  out.sample_losses = sample_losses(logits, targets, batch.size, batch.tgt_len);
  switch (plan.mode) {
    case DistillMode::bl:
      out.selected = select_hard_batch(out.sample_losses, plan.hard_ratio);
      break;
    case DistillMode::gl:
      out.selected = select_hard_global(state.global_queue, out.sample_losses, plan.hard_ratio);
      break;
    default: {
      if (static_cast<int>(batch.languages.size()) != batch.size) {
        throw PreconditionError("language-wise selection needs one language per sentence");
      }
      const int cap = plan.language_capacity(static_cast<int>(std::max<std::size_t>(1, state.language_queues.size())));
      out.selected = select_hard_language_wise(state.language_queues, batch.languages, out.sample_losses,
                                               plan.hard_ratio, cap);
    }
  }

  auto ce = numerics::label_smoothed_ce(logits, targets, label_smoothing, kPad);
  out.ce = ce.item();
  std::vector<std::uint8_t> mask(targets.size(), 0);
  bool any = false;
  for (int b : out.selected) {
    for (int t = 0; t < batch.tgt_len; ++t) {
      const auto r = static_cast<std::size_t>(b * batch.tgt_len + t);
      if (targets[r] != kPad) mask[r] = 1, any = true;
    }
  }
  const double lambda = plan.kd_weight;
  if (!any || lambda == 0.0) {
    out.loss = lambda < 1.0 ? numerics::scale(ce, 1.0 - lambda) : numerics::scale(ce, 0.0);
    return out;
  }
  auto kl = numerics::kl_div(teacher_logits, logits, mask, plan.temperature);
  out.kd = kl.item();
  out.loss = numerics::add(numerics::scale(ce, 1.0 - lambda), numerics::scale(kl, lambda));
  return out;
}

StepResult training_step(model::Model& student, const model::Model* teacher, const model::Batch& batch,
                         const DistillPlan& plan, TrainState& state, const numerics::OptimizerConfig& opt) {
  auto params = student.trainable_parameters();
  for (auto& p : params) p.tensor.zero_grad();
  LossParts parts;
  try {
    parts = distill_loss(student, teacher, batch, plan, state, opt.label_smoothing);
  } catch (const NumericDomainError& e) {
    throw DivergenceError(std::string("non-finite activations at step ") + std::to_string(state.step + 1) + ": " +
                          e.what());
  }
  StepResult r;
  r.loss = parts.loss.item();
  r.ce = parts.ce;
  r.kd = parts.kd;
  r.selected = std::move(parts.selected);
  if (!std::isfinite(r.loss)) {
    throw DivergenceError("non-finite loss at step " + std::to_string(state.step + 1));
  }
  parts.loss.backward();
  r.grad_norm = numerics::clip_grad_norm(params, opt.max_grad_norm);
  if (!std::isfinite(r.grad_norm)) {
    throw DivergenceError("non-finite gradient norm at step " + std::to_string(state.step + 1));
  }
  ++state.step;
  r.lr = numerics::lr_at(state.step, opt);
  numerics::adam_step(params, state.adam, opt, state.step);
  return r;
}

}  // namespace distillkit::distill
