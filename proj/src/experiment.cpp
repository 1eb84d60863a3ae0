#include "stylesplit/experiment.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace stylesplit {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

std::string probe_label(Branch b, Target t) { return std::string(branch_name(b)) + "->" + target_name(t); }

}  // namespace

std::uint64_t partition_seed(std::uint64_t run_seed) { return sample_seed(run_seed, 0x70617274ULL); }
std::uint64_t split_seed(std::uint64_t run_seed) { return sample_seed(run_seed, 0x73706c74ULL); }

// ---- pretraining ----

Pretrainer::Pretrainer(const RunConfig& cfg, const std::vector<SyntheticSample>& data)
    : cfg_(cfg),
      data_(&data),
      partition_(partition(data.size(), cfg.train.domains, partition_seed(cfg.seed))),
      state_(init_state(cfg.train, cfg.seed)) {}

Pretrainer::Pretrainer(LoadedCheckpoint checkpoint, const std::vector<SyntheticSample>& data)
    : cfg_(std::move(checkpoint.config)),
      data_(&data),
      partition_(partition(data.size(), cfg_.train.domains, partition_seed(cfg_.seed))),
      state_(std::move(checkpoint.state)) {
  if (data.size() != cfg_.samples) {
    throw std::invalid_argument("Pretrainer: dataset has " + std::to_string(data.size()) + " samples, the run used " +
                                std::to_string(cfg_.samples));
  }
}

RoundPlan Pretrainer::plan_for(std::size_t step) const {
  std::size_t per_round = 3 * cfg_.train.steps_per_phase;
  return make_round_plan(step / per_round, cfg_.train.domains, cfg_.train.steps_per_phase);
}

std::vector<std::size_t> Pretrainer::draw(const std::vector<std::size_t>& pool) {
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<std::size_t> out(cfg_.train.batch);
  for (auto& i : out) i = pool[pick(state_.rng)];
  return out;
}

PretrainStep Pretrainer::step(bool audit) {
  auto t0 = Clock::now();
  std::size_t s = state_.step;
  RoundPlan plan = plan_for(s);
  Phase phase = phase_schedule(s % plan.steps_per_round(), plan);
  Tensor x = batch_images(*data_, draw(partition_.subsets[plan.k_src]));
  Tensor y = batch_images(*data_, draw(partition_.subsets[plan.k_tgt]));
  StepResult r = training_step(x, y, phase, state_, audit);
  PretrainStep out;
  out.log = {s, plan.round, phase, plan.k_src, plan.k_tgt, seconds_since(t0), std::move(r.parts)};
  out.audit = r.audit;
  return out;
}

void pretrain(Pretrainer& trainer, std::size_t total_steps, const PretrainHooks& hooks) {
  std::size_t failures = 0;
  const std::size_t every = trainer.config().checkpoint_every;
  while (trainer.state().step < total_steps) {
    try {
      PretrainStep s = trainer.step();
      failures = 0;
      if (hooks.on_step) hooks.on_step(s.log);
    } catch (const NonFiniteLoss& e) {
      if (hooks.on_event) hooks.on_event("non-finite", e.what());
      if (++failures >= hooks.max_consecutive_failures) {
        throw std::runtime_error("pretrain: " + std::to_string(failures) + " consecutive aborted steps, last: " +
                                 e.what());
      }
      continue;
    }
    std::size_t done = trainer.state().step;
    if (hooks.on_checkpoint && every > 0 && done % every == 0 && done < total_steps) hooks.on_checkpoint(done);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(trainer.state().step);
}

// ---- probes ----

Embeddings extract_embeddings(const TrainState& st, const std::vector<SyntheticSample>& data,
                              const std::vector<std::size_t>& indices, const ProbeConfig& probe, std::size_t chunk) {
  if (indices.empty()) throw std::invalid_argument("extract_embeddings: no samples");
  if (chunk == 0) throw std::invalid_argument("extract_embeddings: chunk must be positive");
  NoGradScope no_grad;
  std::vector<double> sty, cnt;
  std::size_t d_sty = 0, d_cnt = 0;
  for (std::size_t begin = 0; begin < indices.size(); begin += chunk) {
    std::vector<std::size_t> part(indices.begin() + static_cast<std::ptrdiff_t>(begin),
                                  indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), begin + chunk)));
    Tensor x = batch_images(data, part);
    Tensor fs = aggregate_tokens(st.style.encode(x), probe.aggregation, probe.scale_weights);
    Tensor fc = st.content.features(st.content.encode(x));
    d_sty = fs.size(1);
    d_cnt = fc.size(1);
    sty.insert(sty.end(), fs.data().begin(), fs.data().end());
    cnt.insert(cnt.end(), fc.data().begin(), fc.data().end());
  }
  Embeddings out;
  out.style = Tensor({indices.size(), d_sty}, std::move(sty));
  out.content = Tensor({indices.size(), d_cnt}, std::move(cnt));
  out.style_labels = style_labels(data, indices);
  out.content_labels = content_labels(data, indices);
  return out;
}

ProbeSplit labeled_split(std::size_t n, double fraction, std::uint64_t seed, std::size_t eval_limit) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("labeled_split: fraction must lie in (0,1)");
  if (n < 2) throw std::invalid_argument("labeled_split: need at least two samples");
  auto order = iota_indices(n);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto labeled = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
  labeled = std::clamp<std::size_t>(labeled, 1, n - 1);
  ProbeSplit s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(labeled));
  s.eval.assign(order.begin() + static_cast<std::ptrdiff_t>(labeled), order.end());
  if (eval_limit > 0 && s.eval.size() > eval_limit) s.eval.resize(eval_limit);
  return s;
}

ProbeOutcome run_probe(Branch branch, Target target, const Embeddings& train, const Embeddings& eval,
                       const ProbeConfig& probe, const DatasetConfig& data) {
  const bool style_target = target == Target::Style;
  const auto& y_train = style_target ? train.style_labels : train.content_labels;
  const auto& y_eval = style_target ? eval.style_labels : eval.content_labels;
  const std::size_t classes = style_target ? data.style_classes : data.content_classes;

  ProbeOutcome out;
  out.branch = branch;
  out.target = target;
  out.n_train = train.size();
  out.n_eval = eval.size();
  out.aggregation = aggregate_mode_name(probe.aggregation);
  for (std::size_t c = 0; c < classes; ++c) {
    out.class_names.push_back(style_target ? style_class_name(c) : std::string(content_class_name(c)));
  }
  switch (branch) {
    case Branch::Style:
    case Branch::Content: {
      const Tensor& f_train = branch == Branch::Style ? train.style : train.content;
      const Tensor& f_eval = branch == Branch::Style ? eval.style : eval.content;
      ProbeHead head = probe_train(f_train, y_train, classes, probe.options);
      out.metrics = probe_eval(head, f_eval, y_eval);
      break;
    }
    case Branch::Fusion: {
      FusionProbe fp = fusion_probe_train(train.style, train.content, y_train, classes, probe.fused_dim, probe.options,
                                          probe.fusion_holdout);
      out.gate_regime = gate_regime_name(fp.regime);
      out.metrics = fusion_probe_eval(fp, eval.style, eval.content, y_eval);
      break;
    }
  }
  return out;
}

// ---- experiments ----

const ProbeOutcome& ExperimentResult::find(Branch b, Target t) const {
  for (const auto& p : probes)
    if (p.branch == b && p.target == t) return p;
  throw std::out_of_range("ExperimentResult: no " + probe_label(b, t) + " probe in run " + tag.run);
}

ExperimentResult run_experiment(const RunConfig& cfg, const RunTag& tag, const std::vector<SyntheticSample>& data,
                                const ExperimentOptions& opt, MetricsStream* metrics) {
  cfg.validate();
  auto say = [&](const std::string& m) {
    if (opt.log) opt.log("[" + tag.run + "] " + m);
  };
  ExperimentResult result;
  result.tag = tag;

  Pretrainer trainer(cfg, data);
  PretrainHooks hooks;
  std::size_t log_every = std::max<std::size_t>(1, cfg.log_every);
  hooks.on_step = [&](const StepLog& log) {
    if (metrics && log.step % log_every == 0) metrics->step(tag, log);
    if (opt.log && (log.step + 1) % 500 == 0) {
      say("step " + std::to_string(log.step + 1) + "/" + std::to_string(cfg.steps) + " total " +
          std::to_string(log.parts.count("total") ? log.parts.at("total") : 0.0));
    }
  };
  hooks.on_event = [&](const std::string& kind, const std::string& message) {
    if (metrics) metrics->event(tag, kind, message);
    say(kind + ": " + message);
  };
  if (!opt.out_dir.empty()) {
    hooks.on_checkpoint = [&](std::size_t step) {
      auto dir = opt.out_dir / tag.run / (step == cfg.steps ? std::string("final") : "step-" + std::to_string(step));
      save_checkpoint(dir, cfg, trainer.state());
    };
  }
  auto t0 = Clock::now();
  pretrain(trainer, cfg.steps, hooks);
  result.pretrain_seconds = seconds_since(t0);
  say("pretrained " + std::to_string(cfg.steps) + " steps in " + std::to_string(result.pretrain_seconds) + " s");

  ProbeSplit split = labeled_split(data.size(), cfg.probe.fraction, split_seed(cfg.seed), cfg.probe.eval_limit);
  Embeddings train = extract_embeddings(trainer.state(), data, split.train, cfg.probe);
  Embeddings eval = extract_embeddings(trainer.state(), data, split.eval, cfg.probe);
  ProbeConfig pc = cfg.probe;
  pc.options.seed = cfg.seed;
  for (const auto& [branch, target] : opt.probes) {
    ProbeOutcome o = run_probe(branch, target, train, eval, pc, cfg.data);
    o.fraction = cfg.probe.fraction;
    if (metrics) metrics->probe(tag, o);
    say(probe_label(branch, target) + " accuracy " + std::to_string(o.metrics.accuracy));
    result.probes.push_back(std::move(o));
  }
  return result;
}

std::vector<ExperimentResult> run_ablation(const RunConfig& base, const std::vector<Variant>& variants,
                                           const std::vector<std::uint64_t>& seeds, const ExperimentOptions& opt,
                                           MetricsStream* metrics) {
  if (seeds.empty()) throw std::invalid_argument("run_ablation: no seeds");
  std::vector<Variant> all{{"full", {}}};
  for (const auto& v : variants)
    if (v.name != "full") all.push_back(v);
  std::vector<ExperimentResult> out;
  for (auto seed : seeds) {
    RunConfig seeded = base;
    seeded.seed = seed;
    auto data = generate_dataset(seeded.samples, seeded.data, seed);
    for (const auto& v : all) {
      RunTag tag{v.name + "-s" + std::to_string(seed), v.name, seed};
      out.push_back(run_experiment(apply_variant(seeded, v), tag, data, opt, metrics));
    }
  }
  return out;
}

}  // namespace stylesplit
