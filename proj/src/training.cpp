#include "stylesplit/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "stylesplit/ops.hpp"

namespace stylesplit {

PseudoDomainPartition partition(std::size_t dataset_size, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("partition: K must be >= 2, got " + std::to_string(k));
  if (dataset_size < k) {
    throw std::invalid_argument("partition: dataset of " + std::to_string(dataset_size) + " cannot fill " +
                                std::to_string(k) + " domains");
  }
  std::vector<std::size_t> perm(dataset_size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = dataset_size - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(perm[i], perm[pick(rng)]);
  }
  PseudoDomainPartition p;
  p.k = k;
  p.seed = seed;
  std::size_t base = dataset_size / k, extra = dataset_size % k, at = 0;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t len = base + (i < extra ? 1 : 0);
    p.subsets.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(at),
                           perm.begin() + static_cast<std::ptrdiff_t>(at + len));
    at += len;
  }
  return p;
}

std::pair<std::size_t, std::size_t> round_domains(std::size_t round, std::size_t k) {
  if (k < 2) throw std::invalid_argument("round_domains: K must be >= 2");
  return {round % k, (round + 1) % k};
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Stylize: return "A-stylize";
    case Phase::Diversify: return "A-diversify";
    case Phase::Reconstruct: return "B-reconstruct";
  }
  return "?";
}

Phase parse_phase(const std::string& name) {
  if (name == "A-stylize") return Phase::Stylize;
  if (name == "A-diversify") return Phase::Diversify;
  if (name == "B-reconstruct") return Phase::Reconstruct;
  throw std::invalid_argument("unknown phase '" + name + "'");
}

RoundPlan make_round_plan(std::size_t round, std::size_t k, std::size_t steps_per_phase) {
  if (steps_per_phase == 0) throw std::invalid_argument("make_round_plan: steps_per_phase must be >= 1");
  auto [src, tgt] = round_domains(round, k);
  return {round, src, tgt, steps_per_phase};
}

Phase phase_schedule(std::size_t step_in_round, const RoundPlan& plan) {
  if (plan.steps_per_phase == 0) throw std::invalid_argument("phase_schedule: steps_per_phase must be >= 1");
  switch ((step_in_round / plan.steps_per_phase) % 3) {
    case 0: return Phase::Stylize;
    case 1: return Phase::Diversify;
    default: return Phase::Reconstruct;
  }
}

// ---- NegativeQueue ----

NegativeQueue::NegativeQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
  if (capacity == 0 || dim == 0) throw std::invalid_argument("NegativeQueue: capacity and dim must be >= 1");
}

void NegativeQueue::enqueue_row(std::span<const double> key) {
  if (key.size() != dim_) {
    throw std::invalid_argument("NegativeQueue: key width " + std::to_string(key.size()) + " vs " +
                                std::to_string(dim_));
  }
  double norm = 0.0;
  for (double v : key) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw std::invalid_argument("NegativeQueue: key has no direction");
  std::vector<double> row(key.begin(), key.end());
  for (auto& v : row) v /= norm;
  if (rows_.size() == capacity_) rows_.pop_front();
  rows_.push_back(std::move(row));
}

void NegativeQueue::enqueue(const Tensor& keys) {
  if (keys.dim() != 2) throw std::invalid_argument("NegativeQueue: keys must be [B,D], got " + shape_str(keys.shape()));
  auto d = keys.data();
  for (std::size_t i = 0; i < keys.size(0); ++i) enqueue_row(d.subspan(i * keys.size(1), keys.size(1)));
}

void NegativeQueue::restore(std::deque<std::vector<double>> rows) {
  if (rows.size() > capacity_) throw std::invalid_argument("NegativeQueue: restored contents exceed capacity");
  for (const auto& r : rows) {
    if (r.size() != dim_) throw std::invalid_argument("NegativeQueue: restored row has the wrong width");
  }
  rows_ = std::move(rows);
}

Tensor NegativeQueue::as_tensor() const {
  if (rows_.empty()) return {};
  std::vector<double> flat;
  flat.reserve(rows_.size() * dim_);
  for (const auto& r : rows_) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor({rows_.size(), dim_}, std::move(flat));
}

// ---- StyleBank ----

namespace {

Tensor row_of(const Tensor& t, std::size_t i) {
  Shape s = t.shape();
  std::size_t per = t.numel() / s[0];
  s[0] = 1;
  auto d = t.data().subspan(i * per, per);
  return Tensor(s, std::vector<double>(d.begin(), d.end()));
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  Shape s = rows.front().shape();
  std::vector<double> flat;
  flat.reserve(rows.size() * rows.front().numel());
  for (const auto& r : rows) flat.insert(flat.end(), r.data().begin(), r.data().end());
  s[0] = rows.size();
  return Tensor(s, std::move(flat));
}

std::vector<std::size_t> uniform_draws(std::size_t count, std::size_t size, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, size - 1);
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = pick(rng);
  return out;
}

}  // namespace

StyleBank::StyleBank(std::size_t bundle_capacity, std::size_t replay_capacity)
    : bundle_capacity_(bundle_capacity), replay_capacity_(replay_capacity) {
  if (bundle_capacity == 0 || replay_capacity == 0) throw std::invalid_argument("StyleBank: capacities must be >= 1");
}

void StyleBank::push_bundles(const StyleBundle& bundle) {
  for (std::size_t b = 0; b < bundle.batch(); ++b) {
    BankEntry e;
    for (std::size_t i = 0; i < kScales; ++i) {
      e.maps[i] = row_of(bundle.maps[i], b);
      e.tokens[i] = row_of(bundle.tokens[i], b);
    }
    e.global = row_of(bundle.global, b);
    if (bundles_.size() == bundle_capacity_) bundles_.pop_front();
    bundles_.push_back(std::move(e));
  }
}

void StyleBank::push_replay(const Tensor& stylized, const Tensor& sources) {
  if (stylized.shape() != sources.shape()) {
    throw std::invalid_argument("StyleBank: replay pair " + shape_str(stylized.shape()) + " vs " +
                                shape_str(sources.shape()));
  }
  for (std::size_t b = 0; b < stylized.size(0); ++b) {
    if (replay_.size() == replay_capacity_) replay_.pop_front();
    replay_.push_back({row_of(stylized, b), row_of(sources, b)});
  }
}

StyleBundle StyleBank::sample_bundles(std::size_t count, Rng& rng) const {
  if (bundles_.empty()) throw std::logic_error("StyleBank: sampling from an empty bank");
  auto idx = uniform_draws(count, bundles_.size(), rng);
  StyleBundle out;
  std::vector<Tensor> rows(count);
  for (std::size_t i = 0; i < kScales; ++i) {
    for (std::size_t j = 0; j < count; ++j) rows[j] = bundles_[idx[j]].maps[i];
    out.maps[i] = stack_rows(rows);
    for (std::size_t j = 0; j < count; ++j) rows[j] = bundles_[idx[j]].tokens[i];
    out.tokens[i] = stack_rows(rows);
  }
  for (std::size_t j = 0; j < count; ++j) rows[j] = bundles_[idx[j]].global;
  out.global = stack_rows(rows);
  return out;
}

std::pair<Tensor, Tensor> StyleBank::sample_replay(std::size_t count, Rng& rng) const {
  if (replay_.empty()) throw std::logic_error("StyleBank: sampling from an empty replay buffer");
  auto idx = uniform_draws(count, replay_.size(), rng);
  std::vector<Tensor> sty(count), src(count);
  for (std::size_t j = 0; j < count; ++j) {
    sty[j] = replay_[idx[j]].stylized;
    src[j] = replay_[idx[j]].source;
  }
  return {stack_rows(sty), stack_rows(src)};
}

void StyleBank::restore(std::deque<BankEntry> bundles, std::deque<ReplayEntry> replay) {
  if (bundles.size() > bundle_capacity_ || replay.size() > replay_capacity_) {
    throw std::invalid_argument("StyleBank: restored contents exceed capacity");
  }
  bundles_ = std::move(bundles);
  replay_ = std::move(replay);
}

StyleBundle mix_bundles(const StyleBundle& a, const StyleBundle& b, double alpha) {
  auto blend = [alpha](const Tensor& u, const Tensor& v) {
    return ops::add(ops::mul_scalar(u, alpha), ops::mul_scalar(v, 1.0 - alpha));
  };
  StyleBundle out;
  for (std::size_t i = 0; i < kScales; ++i) {
    out.maps[i] = blend(a.maps[i], b.maps[i]);
    out.tokens[i] = blend(a.tokens[i], b.tokens[i]);
  }
  out.global = blend(a.global, b.global);
  return out;
}

StyleBundle detach_bundle(const StyleBundle& b) {
  StyleBundle out;
  for (std::size_t i = 0; i < kScales; ++i) {
    out.maps[i] = b.maps[i].detach();
    out.tokens[i] = b.tokens[i].detach();
  }
  out.global = b.global.detach();
  return out;
}

// ---- augmentation and positives ----

bool AugmentConfig::identity() const {
  return max_shift == 0 && !flip && brightness == 0.0 && contrast == 0.0 && saturation == 0.0 && channel_gain == 0.0;
}

Tensor augment(const Tensor& x, const AugmentConfig& cfg, Rng& rng) {
  if (x.dim() != 4 || x.size(1) != 3) throw std::invalid_argument("augment: expected [B,3,H,W], got " + shape_str(x.shape()));
  if (cfg.identity()) return x.detach().clone();
  std::size_t n = x.size(0), h = x.size(2), w = x.size(3), plane = h * w;
  auto src = x.data();
  std::vector<double> out(src.size());
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  auto s = static_cast<long>(cfg.max_shift);
  std::uniform_int_distribution<long> shift(-s, s);
  for (std::size_t b = 0; b < n; ++b) {
    long dy = shift(rng), dx = shift(rng);
    bool flip = cfg.flip && coin(rng);
    double bright = cfg.brightness * unit(rng);
    double contrast = 1.0 + cfg.contrast * unit(rng);
    double sat = 1.0 + cfg.saturation * unit(rng);
    double gain[3];
    for (auto& g : gain) g = 1.0 + cfg.channel_gain * unit(rng);
    const double* in = src.data() + b * 3 * plane;
    double* o = out.data() + b * 3 * plane;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < h; ++i) {
        long si = std::clamp(static_cast<long>(i) + dy, 0L, static_cast<long>(h) - 1);
        for (std::size_t j = 0; j < w; ++j) {
          long jj = flip ? static_cast<long>(w - 1 - j) : static_cast<long>(j);
          long sj = std::clamp(jj + dx, 0L, static_cast<long>(w) - 1);
          o[c * plane + i * w + j] = in[c * plane + static_cast<std::size_t>(si) * w + static_cast<std::size_t>(sj)];
        }
      }
    }
    double mean = 0.0;
    for (std::size_t i = 0; i < 3 * plane; ++i) mean += o[i];
    mean /= static_cast<double>(3 * plane);
    for (std::size_t p = 0; p < plane; ++p) {
      double gray = (o[p] + o[plane + p] + o[2 * plane + p]) / 3.0;
      for (std::size_t c = 0; c < 3; ++c) {
        double v = o[c * plane + p];
        v = gray + sat * (v - gray);
        v = mean + contrast * (v - mean);
        v = v * gain[c] + bright;
        o[c * plane + p] = std::clamp(v, -1.0, 1.0);
      }
    }
  }
  return Tensor(x.shape(), std::move(out));
}

const char* positive_mode_name(PositiveMode m) {
  switch (m) {
    case PositiveMode::Augment: return "augment";
    case PositiveMode::Stylize: return "stylize";
    case PositiveMode::Both: return "both";
  }
  return "?";
}

PositiveMode parse_positive_mode(const std::string& name) {
  if (name == "augment") return PositiveMode::Augment;
  if (name == "stylize") return PositiveMode::Stylize;
  if (name == "both") return PositiveMode::Both;
  throw std::invalid_argument("unknown positive mode '" + name + "' (expected augment|stylize|both)");
}

PositivePair make_positive_pair(const Tensor& x, PositiveMode mode, const StyleBank& bank,
                                const ContentEncoder& content, const Generator& gen, const AugmentConfig& aug,
                                Rng& rng, const std::function<void(const std::string&)>& log) {
  PositivePair pair;
  pair.query = augment(x, aug, rng);
  if (mode != PositiveMode::Augment && bank.empty()) {
    if (log) log(std::string("positive pair: style bank empty, mode '") + positive_mode_name(mode) +
                 "' falls back to augment");
    mode = PositiveMode::Augment;
  }
  pair.used = mode;
  if (mode == PositiveMode::Augment) {
    pair.key = augment(x, aug, rng);
    return pair;
  }
  Tensor base = mode == PositiveMode::Both ? augment(x, aug, rng) : x.detach();
  StyleBundle style = bank.sample_bundles(x.size(0), rng);
  NoGradScope no_grad;
  pair.key = stylize(content, gen, base, style).detach();
  return pair;
}

Tensor moco_keys(const Tensor& x_view, const ContentEncoder& key_encoder) {
  NoGradScope no_grad;
  return key_encoder.embed(key_encoder.encode(x_view)).detach();
}

void ema_update(const ParamList& target, const ParamList& source, double momentum) {
  if (!(momentum >= 0.0 && momentum <= 1.0)) {
    throw std::invalid_argument("ema_update: momentum must lie in [0,1], got " + std::to_string(momentum));
  }
  if (target.size() != source.size()) throw std::invalid_argument("ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    Tensor t = target[i].tensor;
    auto tv = t.mutable_data();
    auto sv = source[i].tensor.data();
    if (tv.size() != sv.size()) throw std::invalid_argument("ema_update: shape mismatch at " + target[i].name);
    for (std::size_t j = 0; j < tv.size(); ++j) tv[j] = momentum * tv[j] + (1.0 - momentum) * sv[j];
  }
}

// ---- TrainState ----

namespace {

void append_prefixed(ParamList& out, const ParamList& src, const std::string& prefix) {
  for (const auto& p : src) out.push_back({prefix + p.name, p.tensor});
}

}  // namespace

ParamList TrainState::trainable() const {
  ParamList out;
  append_prefixed(out, content.parameters(), "");
  append_prefixed(out, style.parameters(), "");
  append_prefixed(out, gen.parameters(), "");
  append_prefixed(out, style_pred.parameters(), "style_");
  append_prefixed(out, content_pred.parameters(), "content_");
  return out;
}

ParamList TrainState::key_params() const { return content_key.parameters(); }
ParamList TrainState::teacher_params() const { return style_teacher.parameters(); }

ParamList TrainState::all_params() const {
  ParamList out = trainable();
  append_prefixed(out, disc.parameters(), "");
  append_prefixed(out, key_params(), "key.");
  append_prefixed(out, teacher_params(), "teacher.");
  return out;
}

TrainState init_state(const TrainConfig& cfg, std::uint64_t seed) {
  cfg.weights.validate();
  TrainState s;
  s.cfg = cfg;
  s.rng.seed(seed);
  s.content = ContentEncoder(cfg.arch, s.rng);
  s.content_key = ContentEncoder(cfg.arch, s.rng);
  s.style = StyleEncoder(cfg.arch, s.rng);
  s.style_teacher = StyleEncoder(cfg.arch, s.rng);
  s.gen = Generator(cfg.arch, s.rng);
  s.disc = Discriminator(cfg.arch, s.rng);
  std::size_t s5 = scale_extents(cfg.arch.image_size)[kScales - 1];
  s.style_pred = Predictor(kScales + 1, cfg.arch.token_dim, cfg.predictor_hidden, s.rng);
  s.content_pred = Predictor(s5 * s5, cfg.arch.token_dim, cfg.predictor_hidden, s.rng);
  copy_values(s.key_params(), s.content.parameters());
  copy_values(s.teacher_params(), s.style.parameters());
  set_requires_grad(s.key_params(), false);
  set_requires_grad(s.teacher_params(), false);
  s.opt_g = Adam(s.trainable(), cfg.opt_gen);
  s.opt_d = Adam(s.disc.parameters(), cfg.opt_disc);
  s.queue = NegativeQueue(cfg.queue_capacity, cfg.arch.content_embed_dim);
  s.bank = StyleBank(cfg.bank_capacity, cfg.replay_capacity);
  return s;
}

// ---- training_step ----

namespace {

// Rows [B*P, C] of a feature map at the given flat spatial positions,
// L2-normalized, returned as [B,P,C].
Tensor sample_positions(const Tensor& fmap, const std::vector<std::size_t>& pos) {
  std::size_t b = fmap.size(0), c = fmap.size(1), hw = fmap.size(2) * fmap.size(3);
  Tensor rows = ops::permute(ops::reshape(fmap, {b, c, hw}), {0, 2, 1});
  Tensor picked = ops::index_select(rows, 1, pos);
  Tensor unit = ops::l2_normalize_rows(ops::reshape(picked, {b * pos.size(), c}));
  return ops::reshape(unit, {b, pos.size(), c});
}

std::vector<std::size_t> draw_positions(std::size_t hw, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(hw);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  count = std::min(count, hw);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, hw - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(count);
  return idx;
}

double max_abs(const Tensor& t) {
  if (!t.defined() || !t.has_grad()) return 0.0;
  double m = 0.0;
  for (double g : t.grad()) m = std::max(m, std::abs(g));
  return m;
}

std::vector<std::vector<double>> grad_snapshot(const ParamList& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) {
    if (p.tensor.has_grad()) {
      out.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
    } else {
      out.emplace_back();
    }
  }
  return out;
}

}  // namespace

StepResult training_step(const Tensor& x, const Tensor& y, Phase phase, TrainState& st, bool audit) {
  const TrainConfig& cfg = st.cfg;
  const LossWeights& w = cfg.weights;
  check_image(x, cfg.arch.image_size, "training_step");
  check_image(y, cfg.arch.image_size, "training_step");
  if (x.size(0) != y.size(0) || x.size(0) < 2) {
    throw std::invalid_argument("training_step: source/target batches must match and hold >= 2 images");
  }
  std::size_t batch = x.size(0);

  StepResult result;
  result.phase = phase;
  ParamList trainable = st.trainable();
  ParamList disc_params = st.disc.parameters();
  ParamList key_params = st.key_params();
  ParamList teacher_params = st.teacher_params();
  zero_grads(trainable);
  zero_grads(disc_params);
  if (audit) {
    set_requires_grad(key_params, true);
    set_requires_grad(teacher_params, true);
    zero_grads(key_params);
    zero_grads(teacher_params);
  }
  set_requires_grad(disc_params, false);
  auto restore_flags = [&] {
    set_requires_grad(disc_params, true);
    if (audit) {
      set_requires_grad(key_params, false);
      set_requires_grad(teacher_params, false);
      zero_grads(key_params);
      zero_grads(teacher_params);
    }
  };

  const bool generation = phase != Phase::Reconstruct;
  const bool need_keys = w.moco > 0 || (generation && w.content_nce > 0);
  const bool need_stylized = generation && (w.adv > 0 || w.sty > 0 || w.patch > 0 || w.content_nce > 0 ||
                                            w.fft > 0 || w.swd > 0);

  std::map<std::string, Tensor> parts;
  std::vector<Tensor> targets;
  Tensor keys, queue_t, negatives, x_tilde;
  StyleBundle style_y;
  PositivePair views;

  Graph graph;
  try {
    views = make_positive_pair(x, cfg.positive_mode, st.bank, st.content, st.gen, cfg.augment, st.rng);
    SkipPyramid pq = st.content.encode(views.query);

    if (need_keys) {
      keys = moco_keys(views.key, st.content_key);
      queue_t = st.queue.as_tensor();
      if (queue_t.defined()) {
        if (audit) queue_t.set_requires_grad(true);
        negatives = queue_t.detach();
      }
    }
    if (w.moco > 0) parts["moco"] = info_nce(st.content.embed(pq), keys, negatives, cfg.tau);

    if (w.jepa_cnt > 0) {
      Tensor student = st.content.spatial_tokens(pq);
      Tensor target = st.content_key.spatial_tokens(st.content_key.encode(views.query));
      targets.push_back(target);
      MaskSet mask = sample_mask(student.size(1), batch, cfg.content_jepa.mask_ratio, st.rng);
      parts["jepa_cnt"] = jepa_objective(student, target, st.content_pred, mask, cfg.content_jepa).total;
    }

    style_y = st.style.encode(y);
    if (w.jepa_sty > 0) {
      Tensor student = style_token_sequence(style_y);
      Tensor target = style_token_sequence(st.style_teacher.encode(y));
      targets.push_back(target);
      MaskSet mask = sample_mask(student.size(1), batch, cfg.style_jepa.mask_ratio, st.rng);
      parts["jepa_sty"] = jepa_objective(student, target, st.style_pred, mask, cfg.style_jepa).total;
    }

    if (need_stylized) {
      StyleBundle cond = style_y;
      if (phase == Phase::Diversify && !st.bank.empty()) {
        std::uniform_real_distribution<double> mix(cfg.mix_low, cfg.mix_high);
        double alpha = mix(st.rng);
        cond = mix_bundles(style_y, st.bank.sample_bundles(batch, st.rng), alpha);
      }
      x_tilde = st.gen.decode(pq, cond);
      if (w.adv > 0) parts["adv"] = adv_g(st.disc(x_tilde));
      if (w.sty > 0) parts["sty"] = style_token_consistency(st.style.encode(x_tilde), detach_bundle(cond));
      if (w.content_nce > 0 || w.patch > 0) {
        SkipPyramid pt = st.content.encode(x_tilde);
        if (w.content_nce > 0) parts["content_nce"] = info_nce(st.content.embed(pt), keys, negatives, cfg.tau);
        if (w.patch > 0) {
          std::vector<Tensor> src, sty;
          for (std::size_t layer : {1, 2}) {
            const Tensor& f = pq.s[layer];
            auto pos = draw_positions(f.size(2) * f.size(3), cfg.patch_positions, st.rng);
            src.push_back(sample_positions(f, pos));
            sty.push_back(sample_positions(pt.s[layer], pos));
          }
          parts["patch"] = patch_nce(src, sty, cfg.tau);
        }
      }
      if (w.fft > 0) parts["fft"] = fft_amplitude_loss(x_tilde, y);
      if (w.swd > 0) parts["swd"] = swd_texture_loss(x_tilde, y, cfg.swd_projections, st.rng);
    }

    if (phase == Phase::Reconstruct && w.rec > 0) {
      Tensor mixed, source;
      if (st.bank.replay_size() > 0) {
        std::tie(mixed, source) = st.bank.sample_replay(batch, st.rng);
      } else {
        NoGradScope no_grad;
        StyleBundle cond = st.bank.empty() ? detach_bundle(style_y) : st.bank.sample_bundles(batch, st.rng);
        source = views.query;
        mixed = stylize(st.content, st.gen, source, cond).detach();
      }
      Tensor x_hat = reconstruct_guided(st.content, st.gen, mixed, st.style.encode(source));
      parts["rec"] = reconstruction_loss(x_hat, source);
    }

    for (const auto& [name, value] : parts) {
      if (!std::isfinite(value.item())) throw NonFiniteLoss(name);
      result.parts[name] = value.item();
    }
    Tensor total = total_loss(parts, w);
    if (!std::isfinite(total.item())) throw NonFiniteLoss("total");
    result.parts["total"] = total.item();
    graph.backprop(total);

    if (audit) {
      result.audit.teacher_grad = max_abs_grad(teacher_params);
      result.audit.key_grad = max_abs_grad(key_params);
      for (const auto& t : targets) result.audit.target_grad = std::max(result.audit.target_grad, max_abs(t));
      result.audit.queue_grad = max_abs(queue_t);
      result.audit.disc_grad_in_gen = max_abs_grad(disc_params);
    }

    set_requires_grad(disc_params, true);
    if (generation && w.adv > 0 && x_tilde.defined()) {
      std::vector<std::vector<double>> before;
      if (audit) before = grad_snapshot(trainable);
      Graph disc_graph;
      Tensor d_loss = ops::mul_scalar(hinge_d(st.disc(y), st.disc(x_tilde.detach())), w.adv);
      if (!std::isfinite(d_loss.item())) throw NonFiniteLoss("disc");
      result.parts["disc"] = d_loss.item() / w.adv;
      disc_graph.backprop(d_loss);
      if (audit) result.audit.gen_grads_untouched_by_disc = before == grad_snapshot(trainable);
    }
  } catch (...) {
    restore_flags();
    zero_grads(trainable);
    zero_grads(disc_params);
    throw;
  }
  restore_flags();

  st.opt_g.step();
  st.opt_d.step();
  ema_update(key_params, st.content.parameters(), cfg.moco_momentum);
  update_teacher(teacher_params, st.style.parameters(), cfg.teacher_momentum);
  if (keys.defined()) st.queue.enqueue(keys);
  if (generation) {
    st.bank.push_bundles(detach_bundle(style_y));
    if (x_tilde.defined()) st.bank.push_replay(x_tilde.detach(), views.query);
  }
  ++st.step;
  return result;
}

}  // namespace stylesplit
