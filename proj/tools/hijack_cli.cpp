#include <cmath>
#include <iostream>
#include <random>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hijack/evaluation.hpp"
#include "hijack/optimizer.hpp"
#include "hijack/png_io.hpp"
#include "hijack/run_config.hpp"
#include "hijack/toy_vlm.hpp"

using namespace hijack;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitGradcheck = 1;
constexpr int kExitConfig = 2;
constexpr int kExitAdapter = 3;

TomlTable assemble_config(const std::string& preset, const std::string& config_path,
                          const std::vector<std::string>& overrides,
                          std::optional<std::uint64_t> seed, const std::string& run_dir) {
  TomlTable table;
  if (!preset.empty()) table = preset_config(preset);
  if (!config_path.empty()) table = merge_toml(table, parse_toml_file(config_path));
  for (const auto& o : overrides) {
    // section.key=value
    const auto dot = o.find('.');
    const auto eq = o.find('=');
    if (dot == std::string::npos || eq == std::string::npos || dot > eq)
      throw ConfigError("--set expects section.key=value, got `" + o + "`");
    table = merge_toml(table, parse_toml("[" + o.substr(0, dot) + "]\n" + o.substr(dot + 1),
                                         "--set"));
  }
  if (seed) table["data"]["seed"] = TomlValue{static_cast<std::int64_t>(*seed)};
  if (!run_dir.empty()) table["output"]["run_dir"] = TomlValue{run_dir};
  if (table.empty()) throw ConfigError("no configuration given (use --config or --preset)");
  return table;
}

SuccessCriterion test_criterion(const ResolvedRun& run) {
  switch (run.attack) {
    case AttackType::SpecificString:
      return ExactMatch{run.train_config.models.front()->canonical_text(run.specific_target)};
    case AttackType::LeakContext:
      return LeakTemplate{run.train_config.models.front()->canonical_text(run.leak_template)};
    default:
      if (!run.train_config.validation.judge)
        throw ConfigError("this attack type needs eval.judge for test scoring");
      return JudgeScored{run.train_config.validation.judge};
  }
}

int cmd_train(const TomlTable& table) {
  ResolvedRun run = resolve_run(table);
  RunResult result = train(run.train_config);
  const Checkpoint& best = result.checkpoints[result.best];
  std::cout << "stop_reason=" << result.stop_reason << " best_step=" << best.step
            << " best_val_metric=" << best.val_metric << "\n";
  if (!run.run_dir.empty()) {
    write_run_dir(run, result);
    // test-set evaluation of the best artifact
    if (run.attack == AttackType::SpecificString || run.attack == AttackType::LeakContext) {
      EvalOptions opt;
      opt.max_tokens = run.eval_max_tokens;
      if (!std::holds_alternative<Unconstrained>(run.train_config.constraint) &&
          !std::holds_alternative<LinfBall>(run.train_config.constraint))
        opt.constraint = run.train_config.constraint;
      Rng rng(run.train_config.seed ^ 0x7E57ull);
      EvalReport report = evaluate(*run.train_config.models.front(), best.artifact,
                                   run.test_contexts, test_criterion(run), rng, opt);
      report_render(report, run.run_dir);
      std::cout << "test_rate=" << report.rate << " (" << report.successes << "/"
                << report.n - report.unscored << ")\n";
    }
  }
  return kExitOk;
}

int cmd_eval(const TomlTable& table, const std::string& image_path, const std::string& out_dir) {
  ResolvedRun run = resolve_run(table);
  const ByteImage hijack = read_png(image_path);
  EvalOptions opt;
  opt.max_tokens = run.eval_max_tokens;
  if (!std::holds_alternative<Unconstrained>(run.train_config.constraint) &&
      !std::holds_alternative<LinfBall>(run.train_config.constraint))
    opt.constraint = run.train_config.constraint;
  Rng rng(run.train_config.seed ^ 0x7E57ull);
  EvalReport report = evaluate(*run.train_config.models.front(), hijack, run.test_contexts,
                               test_criterion(run), rng, opt);
  if (!out_dir.empty()) report_render(report, out_dir);
  std::cout << "criterion=" << report.criterion << " rate=" << report.rate << " ("
            << report.successes << "/" << report.n - report.unscored << ")\n";
  return kExitOk;
}

int cmd_capture(const TomlTable& table) {
  ResolvedRun run = resolve_run(table);
  if (run.attack != AttackType::PromptMatching)
    throw ConfigError("capture-teacher requires attack.type = \"prompt_matching\"");
  CaptureStats s = capture_teacher_targets(run.train_config.behaviour,
                                           run.train_config.train_contexts);
  std::cout << "captured hits=" << s.hits << " misses=" << s.misses
            << " skipped=" << s.skipped << "\n";
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, int pixels, int pairs, double tol) {
  register_builtin_adapters();
  ToyVlmConfig cfg;
  cfg.single_precision = false;
  VlmPtr model = build_toy_vlm(cfg, seed);
  Rng rng(seed ^ 0x6E6Eull);
  const ImageShape shape = model->image_shape();
  std::uniform_real_distribution<double> unif(0.05, 0.95);
  std::uniform_int_distribution<int> pick_c(0, shape.channels - 1);
  std::uniform_int_distribution<int> pick_y(0, shape.height - 1);
  std::uniform_int_distribution<int> pick_x(0, shape.width - 1);
  const std::vector<std::pair<std::string, std::string>> cases = {
      {"list three colors", "RED GREEN BLUE"},
      {"say hello", "HELLO THERE"},
      {"count to three", "1 2 3"},
      {"name a city", "PARIS"},
      {"give a warning", "DO NOT OPEN"},
  };
  double worst = 0.0;
  for (int p = 0; p < pairs && p < static_cast<int>(cases.size()); ++p) {
    ImageTensor img;
    img.shape = shape;
    img.values.resize(static_cast<std::size_t>(shape.channels) * shape.height * shape.width);
    for (auto& v : img.values) v = unif(rng);
    const ChatContext ctx{cases[p].first, std::nullopt};
    const Target target = HardText{cases[p].second};
    const LossGrad lg = model->loss_and_image_grad(img, ctx, target);
    for (int q = 0; q < pixels; ++q) {
      const int c = pick_c(rng), y = pick_y(rng), x = pick_x(rng);
      const std::size_t idx =
          (static_cast<std::size_t>(c) * shape.height + y) * shape.width + x;
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
  std::cout << "gradcheck max relative error = " << worst << " (tolerance " << tol << ")\n";
  if (!(worst < tol)) {
    std::cerr << "gradcheck FAILED\n";
    return kExitGradcheck;
  }
  return kExitOk;
}

int cmd_report(const std::string& report_path) {
  EvalReport r = report_from_json(report_path);
  std::cout << "criterion: " << r.criterion << "\n"
            << "contexts:  " << r.n << " (unscored " << r.unscored << ")\n"
            << "successes: " << r.successes << "\n"
            << "rate:      " << r.rate << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"image hijack toolkit"};
  app.require_subcommand(1);

  std::string config_path, preset, run_dir, image_path, out_dir, report_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::uint64_t gc_seed = 0;
  int gc_pixels = 10, gc_pairs = 5;
  double gc_tol = 1e-4;

  auto add_config_opts = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run config (TOML)");
    sub->add_option("--preset", preset, "named preset");
    sub->add_option("--set", overrides, "override section.key=value")->take_all();
    sub->add_option("--seed", seed, "data/run seed override");
    sub->add_option("--run-dir", run_dir, "run output directory");
  };

  auto* train_cmd = app.add_subcommand("train", "optimize a hijack image");
  add_config_opts(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a hijack PNG on the test split");
  add_config_opts(eval_cmd);
  eval_cmd->add_option("--image", image_path, "hijack PNG")->required();
  eval_cmd->add_option("--out", out_dir, "report output directory");

  auto* cap_cmd = app.add_subcommand("capture-teacher", "populate the soft-target cache");
  add_config_opts(cap_cmd);

  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gc_cmd->add_option("--seed", gc_seed, "model seed");
  gc_cmd->add_option("--pixels", gc_pixels, "probes per case");
  gc_cmd->add_option("--pairs", gc_pairs, "context/target cases");
  gc_cmd->add_option("--tol", gc_tol, "max relative error");

  auto* report_cmd = app.add_subcommand("report", "print a saved report.json");
  report_cmd->add_option("report", report_path, "path to report.json")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(gc_cmd)) return cmd_gradcheck(gc_seed, gc_pixels, gc_pairs, gc_tol);
    if (app.got_subcommand(report_cmd)) return cmd_report(report_path);
    const TomlTable table = assemble_config(preset, config_path, overrides, seed, run_dir);
    if (app.got_subcommand(train_cmd)) return cmd_train(table);
    if (app.got_subcommand(eval_cmd)) return cmd_eval(table, image_path, out_dir);
    if (app.got_subcommand(cap_cmd)) return cmd_capture(table);
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    std::cerr << "config error: " << msg << "\n";
    return msg.find("unknown adapter") != std::string::npos ? kExitAdapter : kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitOk;
}
