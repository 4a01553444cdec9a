#pragma once

#include <functional>
#include <optional>

#include "sdb/data.hpp"
#include "sdb/losses.hpp"
#include "sdb/models.hpp"

namespace sdb::train {

struct OptimizerConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// One record per optimizer step; the wrapped-teacher log keeps every term.
struct StepLog {
  std::int64_t step = 0;
  double lr = 0.0;
  losses::LossBreakdown terms;
};
using StepSink = std::function<void(const StepLog&)>;

struct TrainingConfig {
  OptimizerConfig optimizer;
  int epochs = 30;
  int batch_size = 64;
  losses::SdbLossWeights sdb;
  kd::DistillConfig distill;
  std::uint64_t model_seed = 1;
  std::uint64_t data_seed = 1;
  std::uint64_t key_seed = 1;
  bool deterministic = true;
  losses::SdbAblation ablation;
  bool sdb_init_from_teacher = true;
  // scratch students normally consume clean inputs; this trains them on the
  // key-embedded stream instead (with-key scratch baseline rows)
  bool scratch_on_proxy = false;
};

// Cosine decay from base_lr to 0 across total_steps.
double cosine_lr(double base_lr, std::int64_t step, std::int64_t total_steps);

struct EvalResult {
  double acc_plain = 0.0;                    // percent
  std::optional<double> acc_with_key{};
};

// Plain CE training of a fresh model (the reference teacher).
models::Model pretrain_teacher(const TrainingConfig& cfg, const data::DatasetHandle& ds,
                               const models::ModelSpec& spec, const StepSink& sink = {});

struct SdbTrainResult {
  models::Model model;
  std::vector<StepLog> log;
};

// Wrapped-teacher training against the frozen pretrained teacher and a
// frozen random-init reference of the same architecture; both streams go
// through one forward/backward per batch. Ablation switches follow the
// config.
SdbTrainResult train_sdb(const TrainingConfig& cfg, const models::Model& teacher,
                         const keying::Key& key, const data::DatasetHandle& ds,
                         const StepSink& sink = {});

// Knowledge-augmentation-only fine-tuning on the plain stream (no key):
// CE + maintain + eta*aug with frozen references.
models::Model train_aug_teacher(const TrainingConfig& cfg, const models::Model& teacher,
                                const data::DatasetHandle& ds, const StepSink& sink = {});

// Top-1 test accuracy on clean inputs, and on key-embedded inputs when a
// key is supplied.
EvalResult evaluate(const models::Model& model, const data::DatasetHandle& ds,
                    const keying::Key* key = nullptr);

// Student training under cfg.distill.mode: scratch CE, distillation from the
// teacher's clean-input soft labels, or key-authorized distillation with the
// teacher fed the proxy stream. The teacher is never updated.
models::Model train_student(const TrainingConfig& cfg, const data::DatasetHandle& ds,
                            const models::ModelSpec& student_spec,
                            const models::Model* teacher, const keying::Key* key,
                            const StepSink& sink = {});

// Frozen teacher logits over a full split in dataset order (row i = sample i).
Tensor frozen_logits_table(const models::Model& frozen, const data::DatasetHandle& ds,
                           data::Split split, const keying::Key* key);

}  // namespace sdb::train

namespace sdb::kd {

// One optimizer step on the student for one batch. The teacher (when the
// mode needs it) is forwarded live on the stream the mode dictates, unless a
// precomputed logits row block is supplied.
double student_step(const losses::StreamBatch& batch, models::Model& student,
                    const models::Model* teacher, const keying::Key* key,
                    const DistillConfig& cfg, models::SgdMomentum& opt, double lr,
                    const data::NormStats& stats,
                    const Tensor* teacher_logits = nullptr);

}  // namespace sdb::kd
