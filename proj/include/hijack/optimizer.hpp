#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hijack/behaviours.hpp"
#include "hijack/constraints.hpp"
#include "hijack/evaluation.hpp"
#include "hijack/vlm.hpp"

namespace hijack {

// How validation checkpoints are scored. Hard-target attacks use their
// success rate; soft-target (prompt matching) runs use negative validation
// loss; judge-scored attacks defer to the judge. Validation loss is recorded
// in every case.
enum class ValMetricKind { ExactMatch, LeakTemplate, SoftLoss, Judge };

struct ValidationSpec {
  ValMetricKind kind = ValMetricKind::ExactMatch;
  std::string leak_template;  // for LeakTemplate
  JudgePtr judge;             // for Judge
  int max_tokens = 128;
};

struct TrainConfig {
  double learning_rate = 0.03;
  int max_steps = 1000;
  int batch_size = 8;
  int eval_every = 200;
  double budget_seconds = 0.0;  // 0: unbounded
  // optional stop rule: end the run once the validation metric reaches this
  double stop_at_val_metric = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
  ConstraintSpec constraint;
  Behaviour behaviour;
  std::vector<VlmPtr> models;
  ContextSet train_contexts;
  ContextSet val_contexts;
  ValidationSpec validation;
};

struct Checkpoint {
  int step = 0;
  ByteImage artifact;          // quantized learnable array (image or patch)
  HijackParams raw_params;
  double train_loss = 0.0;     // mean over the window since the last eval
  double val_metric = 0.0;
  double val_loss = 0.0;
  std::vector<double> per_model_losses;
};

struct RunResult {
  std::vector<Checkpoint> checkpoints;
  std::size_t best = 0;
  std::vector<double> loss_trace;  // total loss per step
  std::string stop_reason;         // "max_steps" | "budget" | "target_metric"
  std::string error;               // nonempty if the run failed (sweep bookkeeping)
};

struct StepResult {
  HijackParams params;
  std::vector<double> per_model_losses;  // batch-mean loss per model
  double total_loss = 0.0;               // sum over models
};

// One projected-SGD step on the summed per-model Behaviour Matching losses,
// averaged over the batch: params' = project(params - lr * grad).
StepResult behaviour_matching_step(const std::vector<VlmPtr>& models,
                                   const HijackParams& params, const ConstraintSpec& spec,
                                   const Behaviour& behaviour,
                                   const std::vector<ChatContext>& batch, double lr,
                                   Rng& rng);

RunResult train(const TrainConfig& config);

// Computes the validation metric and loss for an arbitrary parameter point
// (used for step-0 baselines and checkpoint scoring).
std::pair<double, double> validate(const TrainConfig& config, const HijackParams& params,
                                   std::uint64_t eval_seed);

struct SweepOptions {
  // When set, runs are ranked by the held-out model's validation loss on each
  // run's best checkpoint (ensemble transfer selection); otherwise by the
  // best checkpoint's validation metric.
  VlmPtr holdout_model;
};

struct SweepResult {
  std::vector<RunResult> runs;
  std::size_t best = 0;
};

SweepResult sweep(const std::vector<TrainConfig>& configs, const SweepOptions& opt = {});

}  // namespace hijack
