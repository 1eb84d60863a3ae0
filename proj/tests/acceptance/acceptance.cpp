// Acceptance gate: one PASS/FAIL line per criterion.
//
// Criteria 6-8 pretrain four variants over three seeds at desk scale. Each
// finished run is cached as JSON keyed by the library archive and the run
// configuration, so a rebuild of the library (or a config change) reruns it.
// Cached runs are reported as such and keep their measured runtime.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "stylesplit/checkpoint.hpp"
#include "stylesplit/config.hpp"
#include "stylesplit/experiment.hpp"
#include "stylesplit/fusion_probe.hpp"
#include "stylesplit/generator.hpp"
#include "stylesplit/gradcheck.hpp"
#include "stylesplit/jepa.hpp"
#include "stylesplit/objectives.hpp"
#include "stylesplit/ops.hpp"
#include "stylesplit/training.hpp"

using namespace stylesplit;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v));
}

// ---- 1: gradient suite ----

Verdict gradient_suite() {
  auto t0 = Clock::now();
  GradCheckOptions opt;
  opt.seeds = 20;
  opt.tolerance = 1e-4;
  auto rows = run_gradient_suite(opt);
  double secs = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name, failed;
  for (const auto& r : rows) {
    if (r.worst_error >= worst) {
      worst = r.worst_error;
      worst_name = r.name;
    }
    if (!r.passed) failed += (failed.empty() ? "" : ",") + r.name;
  }
  Verdict v;
  v.pass = failed.empty() && worst <= 1e-4 && secs <= 120.0 && !rows.empty();
  v.detail = std::to_string(rows.size()) + " loss inputs x 20 seeds, worst rel err " + fmt("%.2e", worst) + " (" +
             worst_name + ") <= 1e-4, " + fmt("%.1f", secs) + " s <= 120 s";
  if (!failed.empty()) v.detail += "; failed: " + failed;
  return v;
}

// ---- 2: closed forms ----

Verdict closed_forms() {
  double worst_nce = 0.0;
  for (std::size_t k = 1; k <= 7; ++k) {
    std::vector<double> qv(8, 0.0), negs(k * 8, 0.0);
    qv[0] = 1.0;
    for (std::size_t i = 0; i < k; ++i) negs[i * 8 + i + 1] = 1.0;
    Tensor q({1, 8}, qv), queue({k, 8}, negs);
    double expect = std::log(1.0 + static_cast<double>(k) * std::exp(-1.0));
    worst_nce = std::max(worst_nce, std::fabs(info_nce(q, q, queue, 1.0).item() - expect));
  }
  double h0 = hinge_d(Tensor::full({2, 1, 3, 3}, 1.0), Tensor::full({2, 1, 3, 3}, -1.0)).item();
  double h2 = hinge_d(Tensor::full({2, 1, 3, 3}, 0.0), Tensor::full({2, 1, 3, 3}, 0.0)).item();

  Rng rng(11);
  double worst_shift = 0.0;
  for (int rep = 0; rep < 5; ++rep) {
    Tensor y = randn({2, 3, 8, 8}, rng);
    std::size_t di = 1 + static_cast<std::size_t>(rep), dj = 7 - static_cast<std::size_t>(rep);
    std::vector<double> shifted(y.numel());
    for (std::size_t nc = 0; nc < 6; ++nc)
      for (std::size_t i = 0; i < 8; ++i)
        for (std::size_t j = 0; j < 8; ++j)
          shifted[nc * 64 + ((i + di) % 8) * 8 + (j + dj) % 8] = y.at(nc * 64 + i * 8 + j);
    worst_shift = std::max(worst_shift, fft_amplitude_loss(Tensor(y.shape(), shifted), y).item());
  }

  // One direction: W1 of sorted samples by hand; several directions average.
  double worst_swd = std::fabs(
      swd_loss_with_directions(Tensor({2, 1}, {0.0, 1.0}), Tensor({2, 1}, {1.0, 2.0}), Tensor({1, 1}, {1.0})).item() -
      1.0);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 7, d = 3, p = 4;
    Tensor a = randn({n, d}, rng), b = randn({n, d}, rng), dirs = randn({d, p}, rng);
    auto dv = dirs.mutable_data();
    for (std::size_t j = 0; j < p; ++j) {
      double norm = 0.0;
      for (std::size_t i = 0; i < d; ++i) norm += dv[i * p + j] * dv[i * p + j];
      for (std::size_t i = 0; i < d; ++i) dv[i * p + j] /= std::sqrt(norm);
    }
    double ref = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      std::vector<double> pa(n), pb(n);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < d; ++i) {
          pa[r] += a.at(r * d + i) * dv[i * p + j];
          pb[r] += b.at(r * d + i) * dv[i * p + j];
        }
      std::sort(pa.begin(), pa.end());
      std::sort(pb.begin(), pb.end());
      for (std::size_t r = 0; r < n; ++r) ref += std::fabs(pa[r] - pb[r]) / static_cast<double>(n * p);
    }
    worst_swd = std::max(worst_swd, std::fabs(swd_loss_with_directions(a, b, dirs).item() - ref));
  }

  Verdict v;
  v.pass = worst_nce <= 1e-10 && h0 == 0.0 && h2 == 2.0 && worst_shift <= 1e-10 && worst_swd <= 1e-10;
  v.detail = "info_nce |err| " + fmt("%.1e", worst_nce) + " (K=1..7), hinge_d " + fmt("%g", h0) + "/" +
             fmt("%g", h2) + ", fft on shifts " + fmt("%.1e", worst_shift) + ", swd |err| " + fmt("%.1e", worst_swd) +
             "; tolerance 1e-10";
  return v;
}

// ---- 3: SPADE ----

std::vector<double> naive_spade(const Tensor& h, const Tensor& m, const Tensor& t, const SpadeBlockParams& p) {
  Tensor hidden = ops::leaky_relu(p.shared_m(m));
  Tensor gm = p.gamma_m(hidden), bm = p.beta_m(hidden), gt = p.gamma_t(t), bt = p.beta_t(t);
  std::size_t n = h.size(0), c = h.size(1), hw = h.size(2) * h.size(3);
  std::vector<double> out(h.numel());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double mean = 0.0, var = 0.0;
      for (std::size_t k = 0; k < hw; ++k) mean += h.at((i * c + ch) * hw + k);
      mean /= static_cast<double>(hw);
      for (std::size_t k = 0; k < hw; ++k) var += std::pow(h.at((i * c + ch) * hw + k) - mean, 2);
      var /= static_cast<double>(hw);
      for (std::size_t k = 0; k < hw; ++k) {
        std::size_t idx = (i * c + ch) * hw + k;
        double norm = (h.at(idx) - mean) / std::sqrt(var + kInstanceNormEps);
        out[idx] = (1.0 + gm.at(idx) + gt.at(i * c + ch)) * norm + bm.at(idx) + bt.at(i * c + ch);
      }
    }
  return out;
}

Verdict spade() {
  Rng rng(21);
  bool identity = true;
  for (int rep = 0; rep < 20; ++rep) {
    SpadeBlockParams p(3, 4, 8, rng);
    p.zero();
    Tensor h = randn({2, 4, 4, 4}, rng, 2.0), m = randn({2, 3, 4, 4}, rng), t = randn({2, 8}, rng);
    Tensor out = spade_modulate(h, m, t, p), ref = ops::instance_norm(h);
    for (std::size_t i = 0; i < ref.numel(); ++i) identity = identity && out.at(i) == ref.at(i);
  }
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    SpadeBlockParams p(3, 4, 8, rng);
    for (Tensor b : {p.shared_m.bias, p.gamma_m.bias, p.beta_m.bias, p.gamma_t.bias, p.beta_t.bias}) {
      Tensor r = randn(b.shape(), rng, 0.3);
      std::copy(r.data().begin(), r.data().end(), b.mutable_data().begin());
    }
    Tensor h = randn({2, 4, 4, 4}, rng, 2.0), m = randn({2, 3, 4, 4}, rng), t = randn({2, 8}, rng);
    Tensor out = spade_modulate(h, m, t, p);
    auto ref = naive_spade(h, m, t, p);
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::fabs(out.at(i) - ref[i]));
  }
  Verdict v;
  v.pass = identity && worst <= 1e-12;
  v.detail = std::string("zero-parameter SPADE == instance norm bitwise: ") + (identity ? "yes" : "no") +
             "; oracle max |err| " + fmt("%.1e", worst) + " <= 1e-12 over 20 cases";
  return v;
}

// ---- 4 and 9: small pretraining runs ----

const char* kSmallRun = R"({
  "seed": 3,
  "data": { "samples": 64, "image_size": 32, "content_classes": 4, "style_classes": 5 },
  "model": { "base_channels": 4, "token_dim": 8, "content_embed_dim": 8, "disc_channels": 4,
             "predictor_hidden": 16 },
  "weights": { "fft": 1.0, "swd": 1.0 },
  "train": { "steps": 500, "batch": 2, "steps_per_phase": 5, "domains": 3, "queue_capacity": 12,
             "bank_capacity": 6, "replay_capacity": 6, "patch_positions": 8, "swd_projections": 4 },
  "output": { "checkpoint_every": 0 }
})";

std::vector<std::vector<double>> queue_rows(const TrainState& s) {
  return {s.queue.rows().begin(), s.queue.rows().end()};
}

// The new queue must be the old one with its oldest rows dropped and unit
// rows appended at the back.
bool fifo_transition(const std::vector<std::vector<double>>& before, const std::vector<std::vector<double>>& after,
                     std::size_t capacity) {
  if (after.size() > capacity) return false;
  if (after == before) return true;
  for (std::size_t added = 1; added <= capacity + before.size(); ++added) {
    if (before.size() + added < after.size()) continue;
    std::size_t dropped = before.size() + added - after.size();
    if (dropped > before.size()) break;
    std::size_t kept = before.size() - dropped;
    if (kept > after.size()) continue;
    if (!std::equal(before.begin() + static_cast<std::ptrdiff_t>(dropped), before.end(), after.begin())) continue;
    bool unit = true;
    for (std::size_t r = kept; r < after.size(); ++r) {
      double n2 = 0.0;
      for (double x : after[r]) n2 += x * x;
      unit = unit && std::fabs(n2 - 1.0) <= 1e-9;
    }
    if (unit) return true;
  }
  return false;
}

bool same_state(const TrainState& a, const TrainState& b) {
  auto pa = a.all_params(), pb = b.all_params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name || pa[i].tensor.shape() != pb[i].tensor.shape()) return false;
    auto x = pa[i].tensor.data(), y = pb[i].tensor.data();
    if (!std::equal(x.begin(), x.end(), y.begin())) return false;
  }
  if (queue_rows(a) != queue_rows(b) || a.step != b.step || a.rng != b.rng) return false;
  if (a.bank.size() != b.bank.size() || a.bank.replay_size() != b.bank.replay_size()) return false;
  for (std::size_t i = 0; i < a.bank.size(); ++i) {
    auto x = a.bank.bundles()[i].global.data(), y = b.bank.bundles()[i].global.data();
    if (!std::equal(x.begin(), x.end(), y.begin())) return false;
  }
  return true;
}

Verdict scheduler_and_queue() {
  RunConfig cfg = parse_run_config(kSmallRun);
  cfg.validate();
  auto data = generate_dataset(cfg.samples, cfg.data, cfg.seed);
  const std::size_t total = 500, half = 250, k = cfg.train.domains, spp = cfg.train.steps_per_phase;

  // Partition: disjoint, covering, balanced.
  Pretrainer reference(cfg, data);
  const auto& dom = reference.domains();
  std::vector<int> seen(data.size(), 0);
  std::size_t lo = data.size(), hi = 0;
  for (const auto& s : dom.subsets) {
    for (std::size_t i : s) ++seen[i];
    lo = std::min(lo, s.size());
    hi = std::max(hi, s.size());
  }
  bool partition_ok = dom.subsets.size() == k && hi - lo <= 1 &&
                      std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; });

  // Rounds visit (r mod K, r+1 mod K) with three phases of spp steps each.
  bool rounds_ok = true;
  std::set<std::size_t> sources;
  const Phase order[3] = {Phase::Stylize, Phase::Diversify, Phase::Reconstruct};
  for (std::size_t s = 0; s < total; ++s) {
    RoundPlan plan = reference.plan_for(s);
    std::size_t r = s / (3 * spp);
    rounds_ok = rounds_ok && plan.round == r && plan.k_src == r % k && plan.k_tgt == (r + 1) % k &&
                phase_schedule(s % (3 * spp), plan) == order[(s % (3 * spp)) / spp];
    sources.insert(plan.k_src);
  }
  rounds_ok = rounds_ok && sources.size() == k;

  bool fifo_ok = true;
  std::size_t enqueue_steps = 0;
  const fs::path dir = fs::temp_directory_path() / ("stylesplit-acceptance-ckpt-" + std::to_string(::getpid()));
  fs::remove_all(dir);
  for (std::size_t s = 0; s < total; ++s) {
    auto before = queue_rows(reference.state());
    reference.step();
    auto after = queue_rows(reference.state());
    if (after != before) ++enqueue_steps;
    fifo_ok = fifo_ok && fifo_transition(before, after, reference.state().queue.capacity());
    if (reference.state().step == half) save_checkpoint(dir, reference.config(), reference.state());
  }
  fifo_ok = fifo_ok && enqueue_steps > 0 && reference.state().queue.size() == reference.state().queue.capacity();

  Pretrainer resumed(load_checkpoint(dir), data);
  bool resumed_at_half = resumed.state().step == half;
  while (resumed.state().step < total) resumed.step();
  bool bitwise = resumed_at_half && same_state(reference.state(), resumed.state());
  fs::remove_all(dir);

  Verdict v;
  v.pass = partition_ok && rounds_ok && fifo_ok && bitwise;
  v.detail = std::string("500 steps, K=") + std::to_string(k) + ": partition disjoint/covering " +
             (partition_ok ? "ok" : "BROKEN") + ", round coverage " + (rounds_ok ? "ok" : "BROKEN") +
             ", queue FIFO over " + std::to_string(enqueue_steps) + " enqueues " + (fifo_ok ? "ok" : "BROKEN") +
             ", reload at 250 bitwise identical at 500: " + (bitwise ? "yes" : "no");
  return v;
}

Verdict stop_gradients() {
  RunConfig cfg = parse_run_config(kSmallRun);
  auto data = generate_dataset(cfg.samples, cfg.data, cfg.seed);
  Pretrainer trainer(cfg, data);
  double worst = 0.0;
  bool untouched = true;
  std::set<std::string> phases;
  for (int s = 0; s < 100; ++s) {
    auto a = trainer.step(true).audit;
    worst = std::max({worst, a.teacher_grad, a.key_grad, a.target_grad, a.queue_grad, a.disc_grad_in_gen});
    untouched = untouched && a.gen_grads_untouched_by_disc;
  }
  for (std::size_t s = 0; s < 100; ++s) phases.insert(phase_name(phase_schedule(s % (3 * cfg.train.steps_per_phase),
                                                                                 trainer.plan_for(s))));
  Verdict v;
  v.pass = worst == 0.0 && untouched;
  v.detail = "100 audited steps over " + std::to_string(phases.size()) +
             " phases: max |grad| on teacher, key encoder, masked-prediction targets, queue and frozen "
             "discriminator = " +
             fmt("%g", worst) + "; generator grads untouched by discriminator update: " + (untouched ? "yes" : "no");
  return v;
}

// ---- 5: anti-collapse ----

Verdict anti_collapse() {
  auto t0 = Clock::now();
  CollapseToyOptions opt;
  const double target = opt.jepa.target_std;
  opt.penalties = false;
  auto off = run_collapse_toy(opt).mean_std;
  opt.penalties = true;
  auto on = run_collapse_toy(opt).mean_std;
  double secs = seconds_since(t0);
  double off_min = *std::min_element(off.begin(), off.end());
  double on_min = *std::min_element(on.begin(), on.end());
  Verdict v;
  v.pass = off_min < 0.1 * target && on_min >= 0.5 * target && secs <= 300.0;
  v.detail = "mean token std, 500 steps: penalties off reaches " + fmt("%.4f", off_min) + " < " +
             fmt("%.2f", 0.1 * target) + " (start " + fmt("%.3f", off.front()) + "), penalties on stays >= " +
             fmt("%.3f", on_min) + " >= " + fmt("%.2f", 0.5 * target) + " (end " + fmt("%.3f", on.back()) + "), " +
             fmt("%.1f", secs) + " s <= 300 s";
  return v;
}

// ---- 6-8: desk-scale ablation ----

std::uint64_t fnv1a(std::uint64_t h, const char* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string run_key(const std::string& library_file, const RunConfig& cfg, const std::string& variant) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::ifstream lib(library_file, std::ios::binary);
  std::vector<char> buf(1 << 16);
  while (lib.read(buf.data(), static_cast<std::streamsize>(buf.size())) || lib.gcount() > 0) {
    h = fnv1a(h, buf.data(), static_cast<std::size_t>(lib.gcount()));
  }
  std::string c = run_config_to_json(cfg) + "|" + variant;
  h = fnv1a(h, c.data(), c.size());
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

struct RunRecord {
  double seconds = 0.0;
  bool cached = false;
  std::map<std::string, double> accuracy;  // "style->style" etc.
  std::string fusion_regime;
};

RunRecord run_or_load(const RunConfig& seeded, const Variant& variant,
                      const std::function<const std::vector<SyntheticSample>&()>& make_data, const fs::path& cache,
                      bool use_cache) {
  RunConfig cfg = apply_variant(seeded, variant);
  const std::string name = variant.name + "-s" + std::to_string(seeded.seed);
  const fs::path file = cache / (name + ".json");
  const std::string key = run_key(STYLESPLIT_LIBRARY_FILE, cfg, variant.name);
  if (use_cache && fs::exists(file)) {
    std::ifstream in(file);
    json j = json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.value("key", "") == key) {
      RunRecord r;
      r.cached = true;
      r.seconds = j.at("seconds").get<double>();
      r.accuracy = j.at("accuracy").get<std::map<std::string, double>>();
      r.fusion_regime = j.value("fusion_regime", "");
      std::cerr << "[acceptance] " << name << ": cached result (" << fmt("%.0f", r.seconds) << " s)\n";
      return r;
    }
  }
  ExperimentOptions opt;
  opt.log = [](const std::string& m) { std::cerr << "[acceptance] " << m << "\n"; };
  auto t0 = Clock::now();
  ExperimentResult res = run_experiment(cfg, RunTag{name, variant.name, seeded.seed}, make_data(), opt);
  RunRecord r;
  r.seconds = seconds_since(t0);
  for (const auto& p : res.probes) {
    r.accuracy[std::string(branch_name(p.branch)) + "->" + target_name(p.target)] = p.metrics.accuracy;
    if (p.branch == Branch::Fusion && p.target == Target::Style) r.fusion_regime = p.gate_regime;
  }
  if (use_cache) {
    fs::create_directories(cache);
    json j{{"key", key},           {"run", name},
           {"seconds", r.seconds}, {"pretrain_seconds", res.pretrain_seconds},
           {"accuracy", r.accuracy}, {"fusion_regime", r.fusion_regime},
           {"config", json::parse(run_config_to_json(cfg))}};
    std::ofstream(file) << j.dump(2) << "\n";
  }
  return r;
}

struct AblationSummary {
  std::map<std::string, std::vector<RunRecord>> runs;  // variant -> per seed
  bool any_cached = false;

  double mean(const std::string& variant, const std::string& probe) const {
    const auto& v = runs.at(variant);
    double s = 0.0;
    for (const auto& r : v) s += r.accuracy.at(probe);
    return 100.0 * s / static_cast<double>(v.size());
  }
};

AblationSummary run_desk_ablation(const fs::path& cache, bool use_cache) {
  RunConfig base = load_run_config(std::string(STYLESPLIT_SOURCE_DIR) + "/configs/desk.jsonc");
  base.validate();
  const std::vector<std::string> names{"full", "no-jepa", "no-fft", "no-swd"};
  AblationSummary out;
  // Variant-major order: the three full runs finish first.
  for (const auto& n : names) {
    for (std::uint64_t seed : {1, 2, 3}) {
      RunConfig seeded = base;
      seeded.seed = seed;
      std::vector<SyntheticSample> data;
      auto make_data = [&]() -> const std::vector<SyntheticSample>& {
        if (data.empty()) data = generate_dataset(seeded.samples, seeded.data, seed);
        return data;
      };
      auto r = run_or_load(seeded, parse_variant(n), make_data, cache, use_cache);
      out.any_cached = out.any_cached || r.cached;
      out.runs[n].push_back(r);
    }
  }
  return out;
}

Verdict disentanglement(const AblationSummary& a) {
  double ss = a.mean("full", "style->style"), sc = a.mean("full", "style->content");
  double cc = a.mean("full", "content->content"), cs = a.mean("full", "content->style");
  double secs = 0.0;
  for (const auto& r : a.runs.at("full")) secs += r.seconds;
  Verdict v;
  v.pass = ss - sc >= 10.0 && cc - cs >= 10.0 && secs <= 3600.0;
  v.detail = "3 seeds, 5k steps, 10% labels: style branch " + fmt("%.2f", ss) + " (style) vs " + fmt("%.2f", sc) +
             " (content), gap " + fmt("%.2f", ss - sc) + " >= 10; content branch " + fmt("%.2f", cc) + " vs " +
             fmt("%.2f", cs) + ", gap " + fmt("%.2f", cc - cs) + " >= 10; runtime " + fmt("%.0f", secs) +
             " s <= 3600 s" + (a.any_cached ? " (measured when cached)" : "");
  return v;
}

Verdict ablation_direction(const AblationSummary& a) {
  double full = a.mean("full", "style->style");
  double jepa = a.mean("no-jepa", "style->style") - full;
  double fft = a.mean("no-fft", "style->style") - full;
  double swd = a.mean("no-swd", "style->style") - full;
  Verdict v;
  v.pass = jepa <= -3.0 && std::fabs(fft) <= 2.0 && std::fabs(swd) <= 2.0;
  v.detail = "style-probe accuracy vs full " + fmt("%.2f", full) + ": no-jepa " + fmt("%+.2f", jepa) +
             " <= -3, no-fft " + fmt("%+.2f", fft) + " and no-swd " + fmt("%+.2f", swd) + " within 2 (3 seeds)";
  return v;
}

Verdict fusion_sanity(const AblationSummary& a) {
  Rng rng(31);
  GateParams p(12, 10, 8, rng);
  for (auto& w : p.gate.weight.mutable_data()) w = 0.0;
  Tensor fs_ = randn({6, 12}, rng), fm = randn({6, 10}, rng);
  double worst = 0.0;
  for (double bias : {20.0, -20.0}) {
    for (auto& b : p.gate.bias.mutable_data()) b = bias;
    auto parts = fuse_parts(fs_, fm, p);
    const Tensor& side = bias > 0 ? parts.z_sem : parts.z_sty;
    for (std::size_t i = 0; i < side.numel(); ++i) worst = std::max(worst, std::fabs(parts.z_fus.at(i) - side.at(i)));
  }
  double fused = a.mean("full", "fusion->style");
  double best = std::max(a.mean("full", "style->style"), a.mean("full", "content->style"));
  std::string regimes;
  for (const auto& r : a.runs.at("full")) regimes += (regimes.empty() ? "" : ",") + r.fusion_regime;
  Verdict v;
  v.pass = worst <= 1e-6 && fused >= best - 1.0;
  v.detail = "saturated gate |z_fus - branch| " + fmt("%.1e", worst) + " <= 1e-6; fusion style accuracy " +
             fmt("%.2f", fused) + " >= max(style, content) - 1 = " + fmt("%.2f", best - 1.0) + " (3 seeds, gate " +
             regimes + ")";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stylesplit acceptance gate"};
  std::vector<int> only;
  bool no_cache = false;
  std::string cache_dir;
  if (const char* env = std::getenv("STYLESPLIT_ACCEPTANCE_CACHE")) cache_dir = env;
  if (cache_dir.empty()) cache_dir = STYLESPLIT_DEFAULT_CACHE;
  app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
  app.add_flag("--no-cache", no_cache, "rerun the desk-scale ablation instead of reading cached runs");
  app.add_option("--cache", cache_dir, "cache directory for the desk-scale runs");
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& fn) {
    if (!wanted(id)) return;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("error: ") + e.what();
    }
    if (!v.pass) ++failures;
    std::cout << "criterion " << id << " [" << (v.pass ? "PASS" : "FAIL") << "] " << name << ": " << v.detail
              << std::endl;
  };

  report(1, "gradient suite", gradient_suite);
  report(2, "closed-form loss values", closed_forms);
  report(3, "SPADE identity and modulation", spade);
  report(4, "scheduler, partition, queue and checkpoint determinism", scheduler_and_queue);
  report(5, "anti-collapse penalties", anti_collapse);
  if (wanted(6) || wanted(7) || wanted(8)) {
    AblationSummary summary;
    std::string error;
    try {
      summary = run_desk_ablation(cache_dir, !no_cache);
    } catch (const std::exception& e) {
      error = e.what();
    }
    auto guarded = [&](const std::function<Verdict(const AblationSummary&)>& fn) {
      return [&, fn]() -> Verdict {
        if (!error.empty()) throw std::runtime_error(error);
        return fn(summary);
      };
    };
    report(6, "disentanglement direction", guarded(disentanglement));
    report(7, "ablation direction", guarded(ablation_direction));
    report(8, "fusion sanity", guarded(fusion_sanity));
  }
  report(9, "stop-gradient guarantees", stop_gradients);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
