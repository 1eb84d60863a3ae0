#include "stylesplit/fusion_probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "stylesplit/ops.hpp"

namespace stylesplit {

const char* aggregate_mode_name(AggregateMode m) {
  switch (m) {
    case AggregateMode::Global: return "global";
    case AggregateMode::Concat: return "concat";
    case AggregateMode::Mean: return "mean";
    case AggregateMode::Weighted: return "weighted";
  }
  return "?";
}

AggregateMode parse_aggregate_mode(const std::string& name) {
  if (name == "global") return AggregateMode::Global;
  if (name == "concat") return AggregateMode::Concat;
  if (name == "mean") return AggregateMode::Mean;
  if (name == "weighted") return AggregateMode::Weighted;
  throw std::invalid_argument("unknown aggregation mode '" + name + "' (expected global|concat|mean|weighted)");
}

std::size_t aggregate_dim(AggregateMode mode, std::size_t token_dim) {
  return mode == AggregateMode::Concat ? (kScales + 1) * token_dim : token_dim;
}

Tensor aggregate_tokens(const StyleBundle& bundle, AggregateMode mode, const std::optional<ScaleWeights>& weights) {
  switch (mode) {
    case AggregateMode::Global:
      return bundle.global;
    case AggregateMode::Concat: {
      std::vector<Tensor> parts{bundle.global};
      for (std::size_t i = kScales; i-- > 0;) parts.push_back(bundle.tokens[i]);
      return ops::concat(parts, 1);
    }
    case AggregateMode::Mean:
    case AggregateMode::Weighted: {
      ScaleWeights w;
      if (mode == AggregateMode::Mean) {
        w.fill(1.0 / static_cast<double>(kScales + 1));
      } else {
        if (!weights) throw std::invalid_argument("aggregate_tokens: weighted mode needs scale weights");
        w = *weights;
      }
      Tensor acc = ops::mul_scalar(bundle.global, w[0]);
      for (std::size_t i = 0; i < kScales; ++i) acc = ops::add(acc, ops::mul_scalar(bundle.tokens[i], w[i + 1]));
      return acc;
    }
  }
  throw std::invalid_argument("aggregate_tokens: bad mode");
}

// ---- gated fusion ----

namespace {

Tensor affine_ln(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  return ops::add(ops::mul(ops::layer_norm(x), gain), bias);
}

}  // namespace

GateParams::GateParams(std::size_t d_sty, std::size_t d_sem, std::size_t d_f, Rng& rng)
    : ln_sty_gain(Tensor::full({d_sty}, 1.0, true)),
      ln_sty_bias(Tensor::zeros({d_sty}, true)),
      ln_sem_gain(Tensor::full({d_sem}, 1.0, true)),
      ln_sem_bias(Tensor::zeros({d_sem}, true)),
      proj_sty(d_sty, d_f, rng),
      proj_sem(d_sem, d_f, rng),
      gate(2 * d_f, d_f, rng),
      ln_out_gain(Tensor::full({d_f}, 1.0, true)),
      ln_out_bias(Tensor::zeros({d_f}, true)) {}

ParamList GateParams::parameters() const {
  ParamList out{{"fusion.ln_sty_gain", ln_sty_gain}, {"fusion.ln_sty_bias", ln_sty_bias},
                {"fusion.ln_sem_gain", ln_sem_gain}, {"fusion.ln_sem_bias", ln_sem_bias}};
  proj_sty.collect(out, "fusion.proj_sty");
  proj_sem.collect(out, "fusion.proj_sem");
  gate.collect(out, "fusion.gate");
  out.push_back({"fusion.ln_out_gain", ln_out_gain});
  out.push_back({"fusion.ln_out_bias", ln_out_bias});
  return out;
}

FusionParts fuse_parts(const Tensor& f_sty, const Tensor& f_sem, const GateParams& p) {
  if (f_sty.dim() != 2 || f_sem.dim() != 2 || f_sty.size(0) != f_sem.size(0) ||
      f_sty.size(1) != p.ln_sty_gain.size(0) || f_sem.size(1) != p.ln_sem_gain.size(0)) {
    throw std::invalid_argument("fuse: style " + shape_str(f_sty.shape()) + " and semantic " +
                                shape_str(f_sem.shape()) + " do not match the gate widths " +
                                std::to_string(p.ln_sty_gain.size(0)) + "/" + std::to_string(p.ln_sem_gain.size(0)));
  }
  FusionParts r;
  r.z_sty = p.proj_sty(affine_ln(f_sty, p.ln_sty_gain, p.ln_sty_bias));
  r.z_sem = p.proj_sem(affine_ln(f_sem, p.ln_sem_gain, p.ln_sem_bias));
  r.gate = ops::sigmoid(p.gate(ops::concat({r.z_sty, r.z_sem}, 1)));
  // g * z_sem + (1 - g) * z_sty, written as z_sty + g * (z_sem - z_sty).
  r.z_fus = ops::add(r.z_sty, ops::mul(r.gate, ops::sub(r.z_sem, r.z_sty)));
  r.fused = affine_ln(r.z_fus, p.ln_out_gain, p.ln_out_bias);
  return r;
}

Tensor fuse(const Tensor& f_sty, const Tensor& f_sem, const GateParams& params) {
  return fuse_parts(f_sty, f_sem, params).fused;
}

// ---- probes ----

namespace {

void check_labels(const Tensor& emb, const std::vector<int>& labels, std::size_t classes, const char* op) {
  if (emb.dim() != 2 || emb.size(0) != labels.size() || labels.empty()) {
    throw std::invalid_argument(std::string(op) + ": embeddings " + shape_str(emb.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw std::invalid_argument(std::string(op) + ": label " + std::to_string(l) + " outside [0," +
                                  std::to_string(classes) + ")");
    }
  }
}

void column_stats(const Tensor& emb, std::vector<double>& mean, std::vector<double>& scale) {
  std::size_t n = emb.size(0), d = emb.size(1);
  auto v = emb.data();
  mean.assign(d, 0.0);
  scale.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += v[i * d + j];
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) scale[j] += (v[i * d + j] - mean[j]) * (v[i * d + j] - mean[j]);
  for (auto& s : scale) {
    s = std::sqrt(s / static_cast<double>(n));
    s = s > 1e-12 ? 1.0 / s : 1.0;
  }
}

Tensor standardize(const Tensor& emb, const std::vector<double>& mean, const std::vector<double>& scale) {
  if (mean.empty()) return emb.detach();
  if (emb.dim() != 2 || emb.size(1) != mean.size()) {
    throw std::invalid_argument("probe: embedding width " + shape_str(emb.shape()) + " vs head width " +
                                std::to_string(mean.size()));
  }
  std::size_t n = emb.size(0), d = emb.size(1);
  auto v = emb.data();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (v[i * d + j] - mean[j]) * scale[j];
  return Tensor(emb.shape(), std::move(out));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  std::size_t n = logits.size(0), c = logits.size(1);
  Tensor onehot = Tensor::zeros({n, c});
  auto o = onehot.mutable_data();
  for (std::size_t i = 0; i < n; ++i) o[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
  Tensor picked = ops::sum_axis(ops::mul(logits, onehot), 1);
  return ops::mean(ops::sub(ops::logsumexp(logits), picked));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::size_t n = logits.size(0), c = logits.size(1);
  auto v = logits.data();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = v.subspan(i * c, c);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

AdamOptions probe_adam(const ProbeOptions& opt) {
  AdamOptions a;
  a.lr = opt.lr;
  a.beta1 = 0.9;
  a.beta2 = 0.999;
  a.weight_decay = opt.weight_decay;
  return a;
}

}  // namespace

Tensor ProbeHead::logits(const Tensor& embeddings) const { return linear(standardize(embeddings, mean, scale)); }

std::vector<int> ProbeHead::predict(const Tensor& embeddings) const {
  NoGradScope no_grad;
  return argmax_rows(logits(embeddings));
}

ProbeHead probe_init(std::size_t dim, std::size_t classes, std::uint64_t seed) {
  if (dim == 0 || classes < 2) throw std::invalid_argument("probe: need dim >= 1 and >= 2 classes");
  Rng rng(seed);
  ProbeHead h;
  h.linear = Linear(dim, classes, rng);
  h.classes = classes;
  return h;
}

ProbeHead probe_train(const Tensor& embeddings, const std::vector<int>& labels, std::size_t classes,
                      const ProbeOptions& opt) {
  check_labels(embeddings, labels, classes, "probe_train");
  ProbeHead head = probe_init(embeddings.size(1), classes, opt.seed);
  column_stats(embeddings, head.mean, head.scale);
  Tensor x = standardize(embeddings, head.mean, head.scale);
  ParamList params;
  head.linear.collect(params, "probe");
  Adam adam(params, probe_adam(opt));
  for (std::size_t e = 0; e < opt.epochs; ++e) {
    Graph g;
    g.backprop(cross_entropy(head.linear(x), labels));
    adam.step();
  }
  return head;
}

ClassMetrics classification_metrics(const std::vector<int>& predicted, const std::vector<int>& labels,
                                    std::size_t classes) {
  if (predicted.size() != labels.size() || labels.empty()) {
    throw std::invalid_argument("classification_metrics: " + std::to_string(predicted.size()) + " predictions vs " +
                                std::to_string(labels.size()) + " labels");
  }
  std::vector<double> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto p = static_cast<std::size_t>(predicted[i]), l = static_cast<std::size_t>(labels[i]);
    if (p >= classes || l >= classes) throw std::invalid_argument("classification_metrics: class id out of range");
    if (p == l) {
      ++correct;
      tp[l] += 1;
    } else {
      fp[p] += 1;
      fn[l] += 1;
    }
  }
  ClassMetrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  m.f1.assign(classes, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    double denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;
    m.f1[c] = 2 * tp[c] / denom;
    sum += m.f1[c];
    ++used;
  }
  m.macro_f1 = used ? sum / static_cast<double>(used) : 0.0;
  return m;
}

ClassMetrics probe_eval(const ProbeHead& head, const Tensor& embeddings, const std::vector<int>& labels) {
  check_labels(embeddings, labels, head.classes, "probe_eval");
  return classification_metrics(head.predict(embeddings), labels, head.classes);
}

AttributeProbe probe_train_multi(const Tensor& embeddings, const std::vector<std::string>& names,
                                 const std::vector<std::vector<int>>& labels, const std::vector<std::size_t>& classes,
                                 const ProbeOptions& opt) {
  if (names.size() != labels.size() || names.size() != classes.size() || names.empty()) {
    throw std::invalid_argument("probe_train_multi: attribute lists differ in length");
  }
  AttributeProbe p;
  p.names = names;
  for (std::size_t a = 0; a < names.size(); ++a) {
    ProbeOptions o = opt;
    o.seed = opt.seed + a;
    p.heads.push_back(probe_train(embeddings, labels[a], classes[a], o));
  }
  return p;
}

MultiMetrics probe_eval_multi(const AttributeProbe& probe, const Tensor& embeddings,
                              const std::vector<std::vector<int>>& labels) {
  if (labels.size() != probe.heads.size()) throw std::invalid_argument("probe_eval_multi: attribute count mismatch");
  MultiMetrics m;
  m.names = probe.names;
  for (std::size_t a = 0; a < labels.size(); ++a) {
    m.per_attribute.push_back(probe_eval(probe.heads[a], embeddings, labels[a]));
    m.mean_accuracy += m.per_attribute.back().accuracy;
    m.mean_f1 += m.per_attribute.back().macro_f1;
  }
  m.mean_accuracy /= static_cast<double>(labels.size());
  m.mean_f1 /= static_cast<double>(labels.size());
  return m;
}

Tensor FusionProbe::fused(const Tensor& f_sty, const Tensor& f_sem) const {
  return fuse(standardize(f_sty, sty_mean, sty_scale), standardize(f_sem, sem_mean, sem_scale), gate);
}

std::vector<int> FusionProbe::predict(const Tensor& f_sty, const Tensor& f_sem) const {
  NoGradScope no_grad;
  return argmax_rows(head.linear(fused(f_sty, f_sem)));
}

const char* gate_regime_name(GateRegime r) {
  switch (r) {
    case GateRegime::Learned: return "learned";
    case GateRegime::Style: return "style";
    case GateRegime::Content: return "content";
  }
  return "?";
}

FusionProbe fusion_probe_train_regime(const Tensor& f_sty, const Tensor& f_sem, const std::vector<int>& labels,
                                      std::size_t classes, std::size_t fused_dim, const ProbeOptions& opt,
                                      GateRegime regime) {
  check_labels(f_sty, labels, classes, "fusion_probe_train");
  check_labels(f_sem, labels, classes, "fusion_probe_train");
  FusionProbe p;
  p.regime = regime;
  Rng rng(opt.seed);
  p.gate = GateParams(f_sty.size(1), f_sem.size(1), fused_dim, rng);
  p.head = probe_init(fused_dim, classes, opt.seed + 1);
  column_stats(f_sty, p.sty_mean, p.sty_scale);
  column_stats(f_sem, p.sem_mean, p.sem_scale);
  Tensor xs = standardize(f_sty, p.sty_mean, p.sty_scale);
  Tensor xm = standardize(f_sem, p.sem_mean, p.sem_scale);
  ParamList params;
  if (regime == GateRegime::Learned) {
    params = p.gate.parameters();
  } else {
    for (auto& w : p.gate.gate.weight.mutable_data()) w = 0.0;
    for (auto& b : p.gate.gate.bias.mutable_data()) b = regime == GateRegime::Style ? -20.0 : 20.0;
    for (auto& e : p.gate.parameters())
      if (e.name.rfind("fusion.gate.", 0) != 0) params.push_back(e);
  }
  p.head.linear.collect(params, "probe");
  Adam adam(params, probe_adam(opt));
  for (std::size_t e = 0; e < opt.epochs; ++e) {
    Graph g;
    g.backprop(cross_entropy(p.head.linear(fuse(xs, xm, p.gate)), labels));
    adam.step();
  }
  return p;
}

FusionProbe fusion_probe_train(const Tensor& f_sty, const Tensor& f_sem, const std::vector<int>& labels,
                               std::size_t classes, std::size_t fused_dim, const ProbeOptions& opt, double holdout) {
  if (!(holdout >= 0.0 && holdout < 1.0)) throw std::invalid_argument("fusion_probe_train: holdout must lie in [0,1)");
  const std::size_t n = labels.size();
  const auto n_val = static_cast<std::size_t>(std::llround(holdout * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n) {
    return fusion_probe_train_regime(f_sty, f_sem, labels, classes, fused_dim, opt, GateRegime::Learned);
  }
  check_labels(f_sty, labels, classes, "fusion_probe_train");
  check_labels(f_sem, labels, classes, "fusion_probe_train");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(opt.seed ^ 0x5eedf00dULL);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> fit(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  auto pick = [&](const std::vector<std::size_t>& idx, std::vector<int>& y) {
    y.clear();
    for (std::size_t i : idx) y.push_back(labels[i]);
  };
  std::vector<int> y_fit, y_val;
  pick(fit, y_fit);
  pick(val, y_val);
  Tensor s_fit = ops::index_select(f_sty, 0, fit), m_fit = ops::index_select(f_sem, 0, fit);
  Tensor s_val = ops::index_select(f_sty, 0, val), m_val = ops::index_select(f_sem, 0, val);

  GateRegime best = GateRegime::Learned;
  double best_acc = -1.0;
  for (GateRegime r : {GateRegime::Learned, GateRegime::Style, GateRegime::Content}) {
    FusionProbe cand = fusion_probe_train_regime(s_fit, m_fit, y_fit, classes, fused_dim, opt, r);
    double acc = classification_metrics(cand.predict(s_val, m_val), y_val, classes).accuracy;
    if (acc > best_acc) {
      best_acc = acc;
      best = r;
    }
  }
  return fusion_probe_train_regime(f_sty, f_sem, labels, classes, fused_dim, opt, best);
}

ClassMetrics fusion_probe_eval(const FusionProbe& probe, const Tensor& f_sty, const Tensor& f_sem,
                               const std::vector<int>& labels) {
  check_labels(f_sty, labels, probe.head.classes, "fusion_probe_eval");
  return classification_metrics(probe.predict(f_sty, f_sem), labels, probe.head.classes);
}

}  // namespace stylesplit
