#include "hijack/optimizer.hpp"

#include <chrono>
#include <cmath>
#include <iostream>

namespace hijack {

namespace {

// Evaluation-time image for a parameter point: the quantized artifact
// composited per the constraint. Moving patches get a fresh placement per
// context from rng.
ImageTensor eval_image(const ConstraintSpec& spec, const ImageTensor& deq_params, Rng& rng) {
  HijackParams p{deq_params.shape, deq_params.values};
  return render(spec, p, rng).image;
}

double model_loss(const Vlm& model, const ImageTensor& image, const ChatContext& ctx,
                  const Target& target) {
  return model.loss_and_image_grad(image, ctx, target).loss;
}

std::string hard_target_text(const Behaviour& behaviour, const ChatContext& ctx) {
  const Target t = behaviour.target(ctx);
  return std::get<HardText>(t).text;
}

}  // namespace

StepResult behaviour_matching_step(const std::vector<VlmPtr>& models,
                                   const HijackParams& params, const ConstraintSpec& spec,
                                   const Behaviour& behaviour,
                                   const std::vector<ChatContext>& batch, double lr,
                                   Rng& rng) {
  if (batch.empty()) throw ConfigError("behaviour_matching_step: empty batch");
  if (models.empty()) throw ConfigError("behaviour_matching_step: empty model list");
  const ImageShape shape = models.front()->image_shape();
  for (const auto& m : models)
    if (m->image_shape() != shape)
      throw ConfigError("ensemble image shapes differ: " + m->id() + " vs " +
                        models.front()->id());

  StepResult out;
  out.per_model_losses.assign(models.size(), 0.0);
  std::vector<double> grad(params.values.size(), 0.0);
  std::size_t used = 0;
  for (const auto& ctx : batch) {
    const Target target = behaviour.target(ctx);
    if (const auto* soft = std::get_if<SoftLogits>(&target); soft && soft->gen.empty())
      continue;  // skipped teacher capture
    const Rendered rendered = render(spec, params, rng);
    ++used;
    for (std::size_t m = 0; m < models.size(); ++m) {
      LossGrad lg;
      try {
        lg = models[m]->loss_and_image_grad(rendered.image, ctx, target);
      } catch (const NumericalError& e) {
        throw NumericalError(std::string(e.what()) + " (model " + models[m]->id() +
                             ", ctx \"" + ctx.user_text + "\")");
      }
      out.per_model_losses[m] += lg.loss;
      const HijackParams g = render_backward(spec, lg.grad, rendered.placement);
      for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g.values[i];
    }
  }
  if (used == 0) throw ConfigError("behaviour_matching_step: batch had no usable targets");
  for (auto& l : out.per_model_losses) {
    l /= static_cast<double>(used);
    out.total_loss += l;
  }
  HijackParams next = params;
  const double scale = lr / static_cast<double>(used);
  for (std::size_t i = 0; i < grad.size(); ++i) next.values[i] -= scale * grad[i];
  out.params = project(spec, std::move(next));
  return out;
}

std::pair<double, double> validate(const TrainConfig& config, const HijackParams& params,
                                   std::uint64_t eval_seed) {
  if (config.val_contexts.empty()) throw ConfigError("train: zero validation contexts");
  // score the quantized artifact, as at deployment
  ImageTensor as_image;
  as_image.shape = params.shape;
  as_image.values = params.values;
  const ImageTensor deq = dequantize(quantize(as_image));

  Rng rng(eval_seed);
  double loss_sum = 0.0;
  std::size_t loss_n = 0;
  std::size_t successes = 0, scored = 0;
  for (const auto& ctx : config.val_contexts.contexts) {
    const ImageTensor image = eval_image(config.constraint, deq, rng);
    const Target target = config.behaviour.target(ctx);
    if (const auto* soft = std::get_if<SoftLogits>(&target); soft && soft->gen.empty())
      continue;
    for (const auto& m : config.models) {
      loss_sum += model_loss(*m, image, ctx, target);
      ++loss_n;
    }
    const auto& scorer = config.validation;
    if (scorer.kind == ValMetricKind::SoftLoss) continue;
    const Vlm& m0 = *config.models.front();
    const std::string output =
        m0.detokenize(m0.generate(image, ctx, scorer.max_tokens));
    ++scored;
    switch (scorer.kind) {
      case ValMetricKind::ExactMatch:
        if (exact_match_success(output, m0.canonical_text(hard_target_text(config.behaviour, ctx))))
          ++successes;
        break;
      case ValMetricKind::LeakTemplate:
        if (leak_context_success(output, ctx.user_text, scorer.leak_template)) ++successes;
        break;
      case ValMetricKind::Judge:
        if (scorer.judge->score(ctx, output) == Verdict::Success) ++successes;
        break;
      default:
        break;
    }
  }
  const double loss = loss_n ? loss_sum / static_cast<double>(loss_n) : 0.0;
  double metric;
  if (config.validation.kind == ValMetricKind::SoftLoss)
    metric = -loss;
  else
    metric = scored ? static_cast<double>(successes) / static_cast<double>(scored) : 0.0;
  return {metric, loss};
}

RunResult train(const TrainConfig& config) {
  if (config.models.empty()) throw ConfigError("train: model list must be nonempty");
  if (config.train_contexts.empty()) throw ConfigError("train: no training contexts");
  if (config.val_contexts.empty()) throw ConfigError("train: zero validation contexts");
  if (config.batch_size <= 0 ||
      static_cast<std::size_t>(config.batch_size) > config.train_contexts.size())
    throw ConfigError("train: batch size must be in [1, |train contexts|]");
  validate_constraint(config.constraint);

  const auto t_start = std::chrono::steady_clock::now();
  const std::uint64_t eval_seed = config.seed ^ 0xE7A1C0DEull;
  Rng batch_rng(config.seed);
  Rng placement_rng(config.seed ^ 0x9A7Cull);

  HijackParams params = init_params(config.constraint);
  RunResult result;

  auto record_checkpoint = [&](int step, double window_loss,
                               const std::vector<double>& per_model) {
    Checkpoint ck;
    ck.step = step;
    ck.raw_params = params;
    ImageTensor as_image;
    as_image.shape = params.shape;
    as_image.values = params.values;
    ck.artifact = quantize(as_image);
    ck.train_loss = window_loss;
    ck.per_model_losses = per_model;
    auto [metric, loss] = validate(config, params, eval_seed);
    ck.val_metric = metric;
    ck.val_loss = loss;
    result.checkpoints.push_back(std::move(ck));
    return metric;
  };

  // step-0 baseline checkpoint
  double last_metric = record_checkpoint(0, 0.0, {});

  std::vector<std::size_t> order(config.train_contexts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();  // trigger reshuffle on first use

  double window_loss_sum = 0.0;
  int window_steps = 0;
  std::vector<double> last_per_model;
  int step = 0;
  result.stop_reason = "max_steps";
  while (step < config.max_steps) {
    if (last_metric >= config.stop_at_val_metric) {
      result.stop_reason = "target_metric";
      break;
    }
    if (config.budget_seconds > 0.0) {
      const double elapsed =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
      if (elapsed >= config.budget_seconds) {
        result.stop_reason = "budget";
        break;
      }
    }
    // without-replacement batch sampling, reshuffled each epoch
    std::vector<ChatContext> batch;
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), batch_rng);
        cursor = 0;
      }
      batch.push_back(config.train_contexts.contexts[order[cursor++]]);
    }
    StepResult sr = behaviour_matching_step(config.models, params, config.constraint,
                                            config.behaviour, batch, config.learning_rate,
                                            placement_rng);
    params = std::move(sr.params);
    result.loss_trace.push_back(sr.total_loss);
    window_loss_sum += sr.total_loss;
    ++window_steps;
    last_per_model = sr.per_model_losses;
    ++step;
    if (step % config.eval_every == 0 || step == config.max_steps) {
      last_metric = record_checkpoint(step, window_loss_sum / window_steps, last_per_model);
      window_loss_sum = 0.0;
      window_steps = 0;
    }
  }
  if (result.checkpoints.back().step != step && window_steps > 0)
    record_checkpoint(step, window_loss_sum / window_steps, last_per_model);

  result.best = 0;
  for (std::size_t i = 1; i < result.checkpoints.size(); ++i)
    if (result.checkpoints[i].val_metric > result.checkpoints[result.best].val_metric)
      result.best = i;  // strict >: earliest step wins ties
  return result;
}

SweepResult sweep(const std::vector<TrainConfig>& configs, const SweepOptions& opt) {
  if (configs.empty()) throw ConfigError("sweep: no configs");
  SweepResult out;
  std::vector<double> rank_scores;  // higher is better
  for (const auto& cfg : configs) {
    RunResult run;
    try {
      run = train(cfg);
    } catch (const std::exception& e) {
      run.error = e.what();
      std::cerr << "[sweep] run failed: " << e.what() << "\n";
      out.runs.push_back(std::move(run));
      rank_scores.push_back(-std::numeric_limits<double>::infinity());
      continue;
    }
    const Checkpoint& best = run.checkpoints[run.best];
    double score;
    if (opt.holdout_model) {
      // ensemble selection: lowest held-out validation loss
      TrainConfig probe = cfg;
      probe.models = {opt.holdout_model};
      probe.validation.kind = ValMetricKind::SoftLoss;
      auto [metric, loss] = validate(probe, best.raw_params, cfg.seed ^ 0xE7A1C0DEull);
      score = -loss;
      (void)metric;
    } else {
      score = best.val_metric;
    }
    rank_scores.push_back(score);
    out.runs.push_back(std::move(run));
  }
  out.best = 0;
  for (std::size_t i = 1; i < rank_scores.size(); ++i)
    if (rank_scores[i] > rank_scores[out.best]) out.best = i;
  if (out.runs[out.best].error.size())
    throw ConfigError("sweep: every run failed; first error: " + out.runs[0].error);
  return out;
}

}  // namespace hijack
