// Command-line entry points: pretrain, probe, gradcheck, ablate, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "stylesplit/checkpoint.hpp"
#include "stylesplit/config.hpp"
#include "stylesplit/experiment.hpp"
#include "stylesplit/gradcheck.hpp"
#include "stylesplit/metrics.hpp"

namespace fs = std::filesystem;
using namespace stylesplit;

namespace {

void log_line(const std::string& m) { std::cerr << m << std::endl; }

RunConfig load_config(const std::string& path) {
  RunConfig cfg = load_run_config(path);
  if (apply_env_overrides(cfg)) log_line(std::string("seed overridden by ") + kSeedEnvVar + ": " + std::to_string(cfg.seed));
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int cmd_pretrain(const std::string& config_path, const fs::path& out, const std::string& resume) {
  RunConfig cfg = load_config(config_path);
  std::optional<Pretrainer> trainer;
  std::vector<SyntheticSample> data;
  if (!resume.empty()) {
    LoadedCheckpoint ck = load_checkpoint(resume);
    if (run_config_to_json(ck.config) != run_config_to_json(cfg)) {
      log_line("note: resuming with the configuration stored in the checkpoint");
    }
    cfg = ck.config;
    data = generate_dataset(cfg.samples, cfg.data, cfg.seed);
    trainer.emplace(std::move(ck), data);
    log_line("resumed at step " + std::to_string(trainer->state().step));
  } else {
    data = generate_dataset(cfg.samples, cfg.data, cfg.seed);
    trainer.emplace(cfg, data);
  }
  fs::create_directories(out);
  write_text(out / "config.json", run_config_to_json(cfg) + "\n");
  MetricsStream metrics(out / "metrics.ndjson");
  RunTag tag{"pretrain-s" + std::to_string(cfg.seed), "full", cfg.seed};

  PretrainHooks hooks;
  hooks.on_step = [&](const StepLog& s) {
    if (s.step % cfg.log_every == 0) metrics.step(tag, s);
    if ((s.step + 1) % 100 == 0) {
      std::ostringstream m;
      m << "step " << s.step + 1 << "/" << cfg.steps << " [" << phase_name(s.phase) << "] total "
        << std::setprecision(5) << s.parts.at("total") << " (" << std::setprecision(3) << s.seconds << " s)";
      log_line(m.str());
    }
  };
  hooks.on_event = [&](const std::string& kind, const std::string& message) {
    metrics.event(tag, kind, message);
    log_line(kind + ": " + message);
  };
  hooks.on_checkpoint = [&](std::size_t step) {
    fs::path dir = out / (step == cfg.steps ? std::string("final") : "step-" + std::to_string(step));
    save_checkpoint(dir, cfg, trainer->state());
    log_line("checkpoint " + dir.string());
  };
  pretrain(*trainer, cfg.steps, hooks);
  return 0;
}

int cmd_probe(const fs::path& ckpt, const std::string& branch, double fraction, const std::string& target,
              const std::string& report_path) {
  LoadedCheckpoint ck = load_checkpoint(ckpt);
  RunConfig& cfg = ck.config;
  ProbeConfig pc = cfg.probe;
  pc.fraction = fraction;
  pc.options.seed = cfg.seed;
  Branch b = parse_branch(branch);
  Target t = parse_target(target);

  auto data = generate_dataset(cfg.samples, cfg.data, cfg.seed);
  ProbeSplit split = labeled_split(data.size(), fraction, split_seed(cfg.seed), pc.eval_limit);
  Embeddings train = extract_embeddings(ck.state, data, split.train, pc);
  Embeddings eval = extract_embeddings(ck.state, data, split.eval, pc);
  ProbeOutcome o = run_probe(b, t, train, eval, pc, cfg.data);
  o.fraction = fraction;

  RunTag tag{ckpt.filename().string().empty() ? ckpt.parent_path().filename().string() : ckpt.filename().string(),
             "full", cfg.seed};
  MetricsStream metrics(ckpt / "probes.ndjson");
  metrics.probe(tag, o);

  std::ostringstream md;
  md << "# Probe: " << branch << " embeddings -> " << target << " label\n\n";
  md << "Checkpoint `" << ckpt.string() << "` at step " << ck.state.step << ", aggregation " << o.aggregation
     << ", " << o.n_train << " labeled / " << o.n_eval << " held-out samples";
  if (!o.gate_regime.empty()) md << ", gate regime " << o.gate_regime;
  md << ".\n\n";
  md << std::fixed << std::setprecision(2);
  md << "| Metric | Value |\n|---|---|\n";
  md << "| Accuracy | " << 100.0 * o.metrics.accuracy << "% |\n";
  md << "| Macro-F1 | " << 100.0 * o.metrics.macro_f1 << "% |\n\n";
  md << "| Class | F1 |\n|---|---|\n";
  md << std::setprecision(4);
  for (std::size_t c = 0; c < o.class_names.size(); ++c) {
    md << "| " << o.class_names[c] << " | ";
    if (std::isnan(o.metrics.f1[c])) {
      md << "n/a";
    } else {
      md << o.metrics.f1[c];
    }
    md << " |\n";
  }
  std::string text = md.str();
  std::cout << text;
  fs::path out = report_path.empty() ? ckpt / ("probe-" + branch + "-" + target + ".md") : fs::path(report_path);
  write_text(out, text);
  return 0;
}

int cmd_gradcheck(std::size_t seeds, double tolerance, double step) {
  GradCheckOptions opt;
  opt.step = step;
  opt.seeds = seeds;
  opt.tolerance = tolerance;
  auto rows = run_gradient_suite(opt);
  bool ok = true;
  std::printf("%-34s %6s %12s  %s\n", "loss/input", "seeds", "max rel err", "result");
  for (const auto& r : rows) {
    std::printf("%-34s %6zu %12.3e  %s\n", r.name.c_str(), r.seeds, r.worst_error, r.passed ? "PASS" : "FAIL");
    ok = ok && r.passed;
  }
  std::printf("%s (tolerance %.1e)\n", ok ? "all passed" : "FAILURES", tolerance);
  return ok ? 0 : 1;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_ablate(const std::string& config_path, const std::string& variant_list, const std::string& seed_list,
               const fs::path& out) {
  RunConfig cfg = load_config(config_path);
  std::vector<Variant> variants;
  for (const auto& v : split_list(variant_list)) variants.push_back(parse_variant(v));
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(seed_list)) seeds.push_back(std::stoull(s));
  if (seeds.empty()) seeds.push_back(cfg.seed);

  fs::create_directories(out);
  MetricsStream metrics(out / "metrics.ndjson");
  ExperimentOptions opt;
  opt.out_dir = out;
  opt.log = log_line;
  run_ablation(cfg, variants, seeds, opt, &metrics);
  std::string report = render_report(out / "metrics.ndjson");
  write_text(out / "report.md", report);
  std::cout << report;
  return 0;
}

int cmd_report(const fs::path& metrics, const std::string& out) {
  std::string report = render_report(metrics);
  if (!out.empty()) write_text(out, report);
  std::cout << report;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-branch style/content self-supervised pretraining harness"};
  app.require_subcommand(1);

  std::string config, out = "runs/pretrain", resume;
  auto* pre = app.add_subcommand("pretrain", "Pretrain on the synthetic dataset");
  pre->add_option("--config", config, "Run configuration (JSON with comments)")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", out, "Output directory for checkpoints and metrics");
  pre->add_option("--resume", resume, "Continue from a checkpoint directory");

  std::string ckpt, branch = "style", target = "style", report_path;
  double fraction = 0.10;
  auto* probe = app.add_subcommand("probe", "Linear probe on frozen embeddings");
  probe->add_option("--ckpt", ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  probe->add_option("--branch", branch, "style|content|fusion")->check(CLI::IsMember({"style", "content", "fusion"}));
  probe->add_option("--fraction", fraction, "Labeled fraction of the dataset")->check(CLI::Range(0.0, 1.0));
  probe->add_option("--target", target, "style|content")->check(CLI::IsMember({"style", "content"}));
  probe->add_option("--report", report_path, "Markdown report path (default: inside the checkpoint)");

  std::size_t seeds = 20;
  double tolerance = 1e-4, fd_step = GradCheckOptions{}.step;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss");
  grad->add_option("--seeds", seeds, "Random points per loss");
  grad->add_option("--tolerance", tolerance, "Maximum relative error");
  grad->add_option("--step", fd_step, "Central-difference step");

  std::string ablate_config, variants = "no-fft,no-swd,no-fft-swd,no-jepa", seed_list, ablate_out = "runs/ablate";
  auto* abl = app.add_subcommand("ablate", "Pretrain and probe the full objective and each variant");
  abl->add_option("--config", ablate_config, "Run configuration")->required()->check(CLI::ExistingFile);
  abl->add_option("--variants", variants, "Comma-separated variants (no-<term>)");
  abl->add_option("--seeds", seed_list, "Comma-separated seeds (default: the config seed)");
  abl->add_option("--out", ablate_out, "Output directory");

  std::string metrics_path, report_out;
  auto* rep = app.add_subcommand("report", "Render Markdown tables from a metrics stream");
  rep->add_option("--metrics", metrics_path, "Metrics file or directory")->required();
  rep->add_option("--out", report_out, "Also write the report here");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*pre) return cmd_pretrain(config, out, resume);
    if (*probe) return cmd_probe(ckpt, branch, fraction, target, report_path);
    if (*grad) return cmd_gradcheck(seeds, tolerance, fd_step);
    if (*abl) return cmd_ablate(ablate_config, variants, seed_list, ablate_out);
    if (*rep) return cmd_report(metrics_path, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return 0;
}
