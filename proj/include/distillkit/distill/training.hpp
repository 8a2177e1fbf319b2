#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distillkit/distill/plan.hpp"
#include "distillkit/distill/selection.hpp"
#include "distillkit/model/transformer.hpp"
#include "distillkit/numerics/optim.hpp"

namespace distillkit::distill {

using numerics::Tensor;

// Mutable state of one training loop.
struct TrainState {
  numerics::AdamState adam;
  std::int64_t step = 0;
  SelectionQueue global_queue{1};
  std::map<std::string, SelectionQueue> language_queues;
  // Dev BLEU after each validation round.
  std::vector<double> dev_history;
};

// Queues sized from the plan; one per listed language.
TrainState make_train_state(const DistillPlan& plan, const std::vector<std::string>& languages);

// Step, queues and dev history (optimizer moments live in checkpoints).
nlohmann::json train_state_to_json(const TrainState& state);
void train_state_from_json(const nlohmann::json& j, TrainState& state);

// (1 - lambda) * label-smoothed CE + lambda * KL(teacher || student) over the
// non-pad rows of `targets`. Zero-weight terms are omitted.
Tensor wsld_loss(const Tensor& student_logits, const Tensor& teacher_logits, std::span<const int> targets,
                 double lambda, double label_smoothing, double temperature = 1.0);

// Mean NLL (no smoothing) of each sentence's non-pad targets; rows of
// `logits` are sentence-major with `tgt_len` rows per sentence.
std::vector<double> sample_losses(const Tensor& logits, std::span<const int> targets, int batch, int tgt_len);

struct LossParts {
  Tensor loss;
  double ce = 0.0;
  std::optional<double> kd;
  // Sentences that received the KL term (selective modes).
  std::vector<int> selected;
  std::vector<double> sample_losses;
};

// Loss for one batch under `plan`. `batch.tgt_out` holds the plan's training
// targets. Selective modes: (1 - lambda) * CE over all rows plus lambda * KL
// averaged over the rows of selected sentences; selection queues in `state`
// are updated. Throws PreconditionError when a required teacher is missing
// or in training mode.
LossParts distill_loss(const model::Model& student, const model::Model* teacher, const model::Batch& batch,
                       const DistillPlan& plan, TrainState& state, double label_smoothing);

struct StepResult {
  double loss = 0.0;
  double ce = 0.0;
  std::optional<double> kd;
  double grad_norm = 0.0;
  double lr = 0.0;
  std::vector<int> selected;
};

// distill_loss, backward, clipping and one Adam update on the student's
// trainable parameters. Throws DivergenceError on a non-finite loss or
// gradient, before any parameter changes.
StepResult training_step(model::Model& student, const model::Model* teacher, const model::Batch& batch,
                         const DistillPlan& plan, TrainState& state, const numerics::OptimizerConfig& opt);

}  // namespace distillkit::distill
