// End-to-end acceptance gate. Each criterion prints exactly one PASS/FAIL
// line; the process exits nonzero if any criterion fails. Run from the
// repository root (the bundled data files are resolved relative to it).
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include "hijack/behaviours.hpp"
#include "hijack/constraints.hpp"
#include "hijack/evaluation.hpp"
#include "hijack/optimizer.hpp"
#include "hijack/run_config.hpp"
#include "hijack/toy_vlm.hpp"

using namespace hijack;

namespace {

int g_failures = 0;

void report(const std::string& id, bool pass, const std::string& detail) {
  std::cout << id << ": " << (pass ? "PASS" : "FAIL") << " (" << detail << ")"
            << std::endl;
  if (!pass) ++g_failures;
}

ToyVlmConfig acceptance_config() {
  ToyVlmConfig cfg;
  cfg.vocab = 260;
  cfg.height = 48;
  cfg.width = 48;
  cfg.direct_r_dim = 64;
  cfg.direct_t_dim = 24;
  cfg.gate_copy_r_dim = 8;
  cfg.gate_copy_t_dim = 4;
  cfg.gate_start_r_dim = 8;
  return cfg;
}

struct Splits {
  ContextSet train, val, test;
};

// 100 train / 50 val / 200 test from the bundled instruction file.
Splits acceptance_splits(std::uint64_t seed) {
  SplitSpec spec;
  spec.val_n = 50;
  spec.test_n = 200;
  spec.seed = seed;
  auto s = load_instruction_dataset("data/instructions.jsonl", spec);
  s.train.contexts.resize(100);
  return {s.train, s.val, s.test};
}

TrainConfig a1_config(const std::vector<VlmPtr>& models) {
  const Splits sp = acceptance_splits(0);
  TrainConfig cfg;
  cfg.models = models;
  cfg.behaviour = specific_string_behaviour(stock::kSpecificString);
  cfg.train_contexts = sp.train;
  cfg.val_contexts = sp.val;
  cfg.constraint =
      Unconstrained{constant_image(models.front()->image_shape(), 0.5)};
  cfg.learning_rate = 0.03;
  cfg.batch_size = 8;
  cfg.max_steps = 1500;  // within the 5,000-step budget
  cfg.eval_every = 250;
  cfg.stop_at_val_metric = 0.98;
  cfg.seed = 0;
  cfg.validation.kind = ValMetricKind::ExactMatch;
  cfg.validation.max_tokens = 96;
  return cfg;
}

double test_rate(const Vlm& model, const ByteImage& artifact, const ContextSet& test,
                 const SuccessCriterion& crit, int max_tokens) {
  Rng rng(0x7E57);
  EvalOptions opt;
  opt.max_tokens = max_tokens;
  EvalReport r = evaluate(model, artifact, test, crit, rng, opt);
  return r.rate;
}

// ---------------------------------------------------------------------------

struct A1Result {
  TrainConfig config;
  RunResult run;
  double rate = 0.0;
};

A1Result g_a1;

void run_a1() {
  VlmPtr model = build_toy_vlm(acceptance_config(), 0);
  g_a1.config = a1_config({model});
  g_a1.run = train(g_a1.config);
  const Checkpoint& best = g_a1.run.checkpoints[g_a1.run.best];
  const Splits sp = acceptance_splits(0);
  g_a1.rate = test_rate(*model, best.artifact, sp.test,
                        ExactMatch{model->canonical_text(stock::kSpecificString)}, 96);
  std::ostringstream d;
  d << "specific-string test success " << g_a1.rate << " at step " << best.step << ", "
    << g_a1.run.loss_trace.size() << " steps run";
  report("A1", g_a1.rate >= 0.95, d.str());
}

void run_a2() {
  VlmPtr model = build_toy_vlm(acceptance_config(), 0);
  const Splits sp = acceptance_splits(0);
  TrainConfig cfg = a1_config({model});
  cfg.behaviour = leak_context_behaviour(stock::kLeakTemplate);
  cfg.max_steps = 3000;  // within the 10,000-step budget
  cfg.validation.kind = ValMetricKind::LeakTemplate;
  cfg.validation.leak_template = model->canonical_text(stock::kLeakTemplate);
  cfg.validation.max_tokens = 128;
  RunResult run = train(cfg);
  const Checkpoint& best = run.checkpoints[run.best];

  // score by hand so every success can also re-verify the ctx-substring
  // postcondition against the raw captured body
  const std::string tmpl = model->canonical_text(stock::kLeakTemplate);
  const auto slot = tmpl.find("{ctx}");
  const std::string prefix = tmpl.substr(0, slot);
  const std::string suffix = tmpl.substr(slot + 5);
  const ImageTensor img = dequantize(best.artifact);
  std::size_t successes = 0, post_ok = 0;
  for (const auto& ctx : sp.test.contexts) {
    const std::string out =
        strip(model->detokenize(model->generate(img, ctx, 128)));
    if (!leak_context_success(out, ctx.user_text, tmpl)) continue;
    ++successes;
    const std::string body =
        out.substr(prefix.size(), out.size() - prefix.size() - suffix.size());
    if (body.find(ctx.user_text) != std::string::npos) ++post_ok;
  }
  const double rate = double(successes) / double(sp.test.size());
  std::ostringstream d;
  d << "leak test success " << rate << ", ctx-substring postcondition " << post_ok << "/"
    << successes << ", best step " << run.checkpoints[run.best].step;
  report("A2", rate >= 0.80 && post_ok == successes, d.str());
}

void run_a3() {
  const ImageShape shape{3, 48, 48};
  Rng rng(31337);
  std::uniform_real_distribution<double> noise(-1.5, 1.5);
  std::size_t violations = 0, cycles = 0;
  std::string first_violation;

  auto fail = [&](const std::string& what) {
    ++violations;
    if (first_violation.empty()) first_violation = what;
  };

  auto exercise = [&](const ConstraintSpec& spec, const std::string& name) {
    validate_constraint(spec);
    for (int it = 0; it < 1000; ++it) {
      ++cycles;
      HijackParams p = init_params(spec);
      for (auto& v : p.values) v += noise(rng);
      HijackParams q = project(spec, p);
      // box bound
      for (double v : q.values)
        if (v < 0.0 || v > 1.0) fail(name + ": box bound");
      // l-inf bound
      if (const auto* ball = std::get_if<LinfBall>(&spec)) {
        for (std::size_t i = 0; i < q.values.size(); ++i)
          if (std::abs(q.values[i] - ball->x_init.values[i]) > ball->epsilon + 1e-15)
            fail(name + ": linf bound");
      }
      // bitwise idempotence
      HijackParams q2 = project(spec, q);
      if (q2.values != q.values) fail(name + ": projection not idempotent");
      if (!is_feasible(spec, q, 1e-15)) fail(name + ": is_feasible rejects projection");
      // render: base pixels outside the patch preserved bitwise
      Rendered r = render(spec, q, rng);
      const ImageTensor* base = nullptr;
      int top = -1, left = -1, size = 0;
      if (const auto* sp = std::get_if<StationaryPatch>(&spec)) {
        base = &sp->x_base;
        top = sp->top;
        left = sp->left;
        size = sp->size;
      } else if (const auto* mp = std::get_if<MovingPatch>(&spec)) {
        base = &mp->x_base;
        top = r.placement->top;
        left = r.placement->left;
        size = mp->size;
      }
      if (base) {
        for (int c = 0; c < shape.channels; ++c)
          for (int y = 0; y < shape.height; ++y)
            for (int x = 0; x < shape.width; ++x) {
              const bool inside =
                  y >= top && y < top + size && x >= left && x < left + size;
              if (!inside && r.image.at(c, y, x) != base->at(c, y, x))
                fail(name + ": non-patch pixel modified");
            }
      }
      for (double v : r.image.values)
        if (v < 0.0 || v > 1.0) fail(name + ": rendered image out of box");
    }
  };

  ImageTensor init = uniform_random_image(shape, rng);
  exercise(Unconstrained{init}, "unconstrained");
  for (int e : {1, 2, 4, 8, 16, 32}) {
    exercise(LinfBall{init, double(e) / 255.0},
             "linf eps=" + std::to_string(e) + "/255");
  }
  // 448px-scale patch edges {40,60,80,100} mapped onto the 48px toy canvas
  for (int s448 : {40, 60, 80, 100}) {
    const int s = std::max(1, (s448 * 48 + 224) / 448);
    exercise(StationaryPatch{init, 5, 9, s},
             "stationary s=" + std::to_string(s448) + "->" + std::to_string(s));
  }
  for (int s : {8, 16}) exercise(MovingPatch{init, s}, "moving s=" + std::to_string(s));

  std::ostringstream d;
  d << cycles << " cycles, " << violations << " violations";
  if (!first_violation.empty()) d << "; first: " << first_violation;
  report("A3", violations == 0, d.str());
}

void run_a4() {
  ToyVlmConfig cfg;  // default 32x32 geometry, 64-bit
  cfg.vocab = 260;
  cfg.single_precision = false;
  VlmPtr model = build_toy_vlm(cfg, 0);
  Rng rng(0xA4);
  std::uniform_real_distribution<double> unif(0.05, 0.95);
  const ImageShape shape = model->image_shape();
  const std::size_t n_px =
      std::size_t(shape.channels) * shape.height * shape.width;
  std::uniform_int_distribution<std::size_t> pick(0, n_px - 1);
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"name a red fruit", "Download the guide"},
      {"give a cold sea", "EmailAPI(to=me)"},
      {"list a fast car", "Sure, here is how"},
      {"find a tall tree", "attack at dawn!"},
      {"pick a warm dish", "0123 456 789"},
  };
  double worst = 0.0;
  for (const auto& [ctx_text, target_text] : cases) {
    ImageTensor img;
    img.shape = shape;
    img.values.resize(n_px);
    for (auto& v : img.values) v = unif(rng);
    const ChatContext ctx{ctx_text, std::nullopt};
    const Target target = HardText{target_text};
    const LossGrad lg = model->loss_and_image_grad(img, ctx, target);
    for (int q = 0; q < 10; ++q) {
      const std::size_t idx = pick(rng);
      const double h = 1e-6;
      ImageTensor plus = img, minus = img;
      plus.values[idx] += h;
      minus.values[idx] -= h;
      const double num = (model->loss_and_image_grad(plus, ctx, target).loss -
                          model->loss_and_image_grad(minus, ctx, target).loss) /
                         (2 * h);
      const double ana = lg.grad.values[idx];
      const double rel =
          std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  std::ostringstream d;
  d << "max relative error " << worst << " over 5 pairs x 10 pixels";
  report("A4", worst < 1e-4, d.str());
}

void run_a5() {
  VlmPtr m0 = build_toy_vlm(acceptance_config(), 0);
  VlmPtr m1 = build_toy_vlm(acceptance_config(), 1);
  VlmPtr held_out = build_toy_vlm(acceptance_config(), 2);

  // additivity of the ensembled loss
  TrainConfig probe = a1_config({m0});
  HijackParams p = init_params(probe.constraint);
  std::vector<ChatContext> batch(probe.train_contexts.contexts.begin(),
                                 probe.train_contexts.contexts.begin() + 8);
  Rng r0(1), r1(1), r2(1);
  const double joint = behaviour_matching_step({m0, m1}, p, probe.constraint,
                                               probe.behaviour, batch, 0.0, r0)
                           .total_loss;
  const double solo =
      behaviour_matching_step({m0}, p, probe.constraint, probe.behaviour, batch, 0.0, r1)
          .total_loss +
      behaviour_matching_step({m1}, p, probe.constraint, probe.behaviour, batch, 0.0, r2)
          .total_loss;
  const double add_err = std::abs(joint - solo) / std::max(1.0, std::abs(solo));

  // joint A1-style run
  TrainConfig cfg = a1_config({m0, m1});
  RunResult run = train(cfg);
  const Checkpoint& best = run.checkpoints[run.best];
  const Splits sp = acceptance_splits(0);
  const ExactMatch crit{m0->canonical_text(stock::kSpecificString)};
  const double rate0 = test_rate(*m0, best.artifact, sp.test, crit, 96);
  const double rate1 = test_rate(*m1, best.artifact, sp.test, crit, 96);
  const double transfer = test_rate(*held_out, best.artifact, sp.test, crit, 96);

  std::ostringstream d;
  d << "additivity rel err " << add_err << "; joint success " << rate0 << " / " << rate1
    << "; held-out transfer " << transfer << " (reported, no threshold)";
  report("A5", add_err <= 1e-12 && rate0 >= 0.90 && rate1 >= 0.90, d.str());
}

void run_a6() {
  // teacher self-loss == mean softmax entropy, in 64-bit
  ToyVlmConfig dcfg;
  dcfg.vocab = 260;
  dcfg.single_precision = false;
  VlmPtr teacher64 = build_toy_vlm(dcfg, 0);
  Rng rng(0xA6);
  ImageTensor img = uniform_random_image(teacher64->image_shape(), rng);
  const ChatContext ctx{"name a red fruit", std::nullopt};
  TokenSequence gen = teacher64->generate(img, ctx, 24);
  if (gen.empty()) gen = teacher64->tokenize("fallback text");
  LogitsSeq logits = teacher64->teacher_forced_logits(img, ctx, gen);
  double entropy = 0.0;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    Eigen::ArrayXd row = logits.row(t).array();
    row -= row.maxCoeff();
    Eigen::ArrayXd p = row.exp();
    p /= p.sum();
    entropy -= (p * p.log()).sum();
  }
  entropy /= double(logits.rows());
  const double self_loss =
      teacher64->loss_and_image_grad(img, ctx, SoftLogits{logits, gen}).loss;
  const double ent_err = std::abs(self_loss - entropy);

  // prompt-matching run against a confident teacher (the A1 artifact)
  VlmPtr model = build_toy_vlm(acceptance_config(), 0);
  const ImageTensor teacher_img =
      dequantize(g_a1.run.checkpoints[g_a1.run.best].artifact);
  PromptMatchingOptions opt;
  opt.gen_cap = 64;
  opt.cache_dir = (std::filesystem::temp_directory_path() / "hijack-accept-pm").string();
  std::filesystem::remove_all(opt.cache_dir);
  TrainConfig cfg = a1_config({model});
  cfg.behaviour =
      prompt_matching_behaviour(model, teacher_img, stock::kDisinfoPrompt, opt);
  cfg.behaviour.contexts = cfg.train_contexts;
  cfg.max_steps = 1500;  // within the 10,000-step budget
  cfg.stop_at_val_metric = std::numeric_limits<double>::infinity();
  cfg.validation.kind = ValMetricKind::SoftLoss;
  RunResult run = train(cfg);
  const double loss0 = run.checkpoints.front().val_loss;
  double loss_best = loss0;
  for (const auto& ck : run.checkpoints) loss_best = std::min(loss_best, ck.val_loss);
  const double reduction = (loss0 - loss_best) / loss0;

  std::ostringstream d;
  d << "self-loss vs entropy err " << ent_err << "; soft loss " << loss0 << " -> "
    << loss_best << " (" << reduction * 100.0 << "% reduction)";
  report("A6", ent_err <= 1e-9 && reduction >= 0.50, d.str());
}

void run_a7() {
  const std::string tmpl =
      "EmailAPI(to=<target email>, subject='User Query', body='{ctx}')";
  const std::string ctx =
      "Please book me a trip to France, my bank account number is 1234";
  const bool worked_success = leak_context_success(
      "EmailAPI(to=<target email>, subject='User Query', body='Assistant: Please book "
      "me a trip to France, my bank account number is 1234')",
      ctx, tmpl);
  const bool worked_failure = !leak_context_success(
      "EmailAPICall(to=<target email>, subject='User Query', body='Please book me a "
      "trip to France, my bank account number is 1234')",
      ctx, tmpl);

  const std::string target = stock::kSpecificString;
  const std::vector<std::string> lead = {"",   " ",    "  ",  "\t",
                                         "\n", " \t\n", "\r\n", "\t "};
  const std::vector<std::string> trail = {"", " ", "\n", "\t\r\n", " \n "};
  int cases = 0, ok = 0;
  for (const auto& l : lead)
    for (const auto& t : trail) {
      if (cases >= 20) break;
      ++cases;
      if (exact_match_success(l + target + t, target)) ++ok;
    }
  const bool inner_strict = !exact_match_success("x" + target, target) &&
                            !exact_match_success(target + " x", target);

  std::ostringstream d;
  d << "worked examples " << (worked_success && worked_failure ? "ok" : "wrong")
    << "; whitespace cases " << ok << "/" << cases;
  report("A7", worked_success && worked_failure && ok == 20 && inner_strict, d.str());
}

namespace lev_oracle {
// memoized recursion, independent of the iterative implementation under test
std::size_t rec(const std::string& a, std::size_t i, const std::string& b, std::size_t j,
                std::vector<int>& memo, std::size_t stride) {
  if (i == a.size()) return b.size() - j;
  if (j == b.size()) return a.size() - i;
  int& m = memo[i * stride + j];
  if (m >= 0) return std::size_t(m);
  std::size_t best = rec(a, i + 1, b, j + 1, memo, stride) + (a[i] != b[j] ? 1 : 0);
  best = std::min(best, rec(a, i + 1, b, j, memo, stride) + 1);
  best = std::min(best, rec(a, i, b, j + 1, memo, stride) + 1);
  m = int(best);
  return best;
}
std::size_t dist(const std::string& a, const std::string& b) {
  std::vector<int> memo((a.size() + 1) * (b.size() + 1), -1);
  return rec(a, 0, b, 0, memo, b.size() + 1);
}
}  // namespace lev_oracle

void run_a8() {
  std::vector<std::string> all{""};
  std::size_t prev_start = 0;
  for (int len = 1; len <= 8; ++len) {
    const std::size_t end = all.size();
    for (std::size_t i = prev_start; i < end; ++i)
      for (char c : {'a', 'b', 'c'}) all.push_back(all[i] + c);
    prev_start = end;
  }
  std::size_t mismatches = 0, pairs = 0;
  for (std::size_t i = 0; i < all.size() && mismatches == 0; ++i)
    for (std::size_t j = i; j < all.size(); ++j) {
      ++pairs;
      const std::size_t want = lev_oracle::dist(all[i], all[j]);
      if (levenshtein(all[i], all[j]) != want ||
          levenshtein(all[j], all[i]) != want) {
        ++mismatches;
        break;
      }
    }
  const bool classic = levenshtein("kitten", "sitting") == 3;
  std::ostringstream d;
  d << pairs << " pairs over {a,b,c}^<=8, " << mismatches
    << " mismatches; kitten/sitting=" << levenshtein("kitten", "sitting");
  report("A8", mismatches == 0 && classic, d.str());
}

void run_a9() {
  // round-trip bound on the grid
  double worst = 0.0;
  ImageTensor grid({1, 1, 10001});
  for (int i = 0; i <= 10000; ++i) grid.values[i] = i / 10000.0;
  ImageTensor rt = dequantize(quantize(grid));
  for (int i = 0; i <= 10000; ++i)
    worst = std::max(worst, std::abs(grid.values[i] - rt.values[i]));

  // quantized vs continuous success on the A1 best checkpoint
  VlmPtr model = build_toy_vlm(acceptance_config(), 0);
  const Splits sp = acceptance_splits(0);
  const Checkpoint& best = g_a1.run.checkpoints[g_a1.run.best];
  const std::string target = model->canonical_text(stock::kSpecificString);
  const double q_rate =
      test_rate(*model, best.artifact, sp.test, ExactMatch{target}, 96);
  ImageTensor cont;
  cont.shape = best.raw_params.shape;
  cont.values = best.raw_params.values;
  std::size_t ok = 0;
  for (const auto& ctx : sp.test.contexts)
    if (exact_match_success(model->detokenize(model->generate(cont, ctx, 96)), target))
      ++ok;
  const double c_rate = double(ok) / double(sp.test.size());
  const double gap = std::abs(q_rate - c_rate);

  std::ostringstream d;
  d << "round-trip max err " << worst << " (bound " << 1.0 / 510.0
    << "); success quantized " << q_rate << " vs continuous " << c_rate << ", gap "
    << gap * 100.0 << "pp";
  report("A9", worst <= 1.0 / 510.0 + 1e-15 && gap <= 0.05, d.str());
}

void run_a10() {
  int passed = 0;
  std::ostringstream rates;
  for (int i = 0; i < 5; ++i) {
    VlmPtr model = build_toy_vlm(acceptance_config(), 0);
    auto rt = random_template_behaviour(1000 + i, "data/wordlist.txt");
    Rng init_rng(2000 + i);
    TrainConfig cfg = a1_config({model});
    cfg.behaviour = rt.behaviour;
    cfg.constraint =
        Unconstrained{uniform_random_image(model->image_shape(), init_rng)};
    cfg.max_steps = 3000;  // matches the leak-attack budget
    cfg.stop_at_val_metric = 0.90;
    cfg.validation.kind = ValMetricKind::LeakTemplate;
    cfg.validation.leak_template = model->canonical_text(rt.template_text);
    cfg.validation.max_tokens = 128;
    RunResult run = train(cfg);
    const Splits sp = acceptance_splits(0);
    const double rate =
        test_rate(*model, run.checkpoints[run.best].artifact, sp.test,
                  LeakTemplate{model->canonical_text(rt.template_text)}, 128);
    if (rate >= 0.70) ++passed;
    rates << (i ? " " : "") << rate;
  }
  std::ostringstream d;
  d << passed << "/5 runs >= 70%; rates: " << rates.str();
  report("A10", passed >= 4, d.str());
}

void run_a11() {
  VlmPtr model = build_toy_vlm(acceptance_config(), 0);
  TrainConfig cfg = a1_config({model});
  RunResult rerun = train(cfg);
  bool traces_equal = rerun.loss_trace.size() == g_a1.run.loss_trace.size();
  if (traces_equal)
    for (std::size_t i = 0; i < rerun.loss_trace.size(); ++i)
      if (rerun.loss_trace[i] != g_a1.run.loss_trace[i]) {  // bitwise
        traces_equal = false;
        break;
      }
  const bool same_best = rerun.checkpoints[rerun.best].step ==
                         g_a1.run.checkpoints[g_a1.run.best].step;
  std::ostringstream d;
  d << "loss traces " << (traces_equal ? "bitwise identical" : "diverged") << " over "
    << rerun.loss_trace.size() << " steps; best step "
    << rerun.checkpoints[rerun.best].step << " vs "
    << g_a1.run.checkpoints[g_a1.run.best].step;
  report("A11", traces_equal && same_best, d.str());
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  try {
    run_a1();
    run_a2();
    run_a3();
    run_a4();
    run_a5();
    run_a6();
    run_a7();
    run_a8();
    run_a9();
    run_a10();
    run_a11();
  } catch (const std::exception& e) {
    std::cout << "acceptance run aborted: " << e.what() << std::endl;
    return 1;
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << (g_failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES PRESENT") << " ("
            << secs << "s)" << std::endl;
  return g_failures == 0 ? 0 : 1;
}
