#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "stylesplit/encoders.hpp"

namespace stylesplit {

enum class AggregateMode { Global, Concat, Mean, Weighted };
const char* aggregate_mode_name(AggregateMode m);
AggregateMode parse_aggregate_mode(const std::string& name);

// Weights ordered (w_G, w_1, ..., w_5).
using ScaleWeights = std::array<double, kScales + 1>;

// global: t_G; concat: [t_G | t_5 | t_4 | t_3 | t_2 | t_1];
// mean: (t_G + sum t_i) / 6; weighted: w_G t_G + sum w_i t_i.
Tensor aggregate_tokens(const StyleBundle& bundle, AggregateMode mode,
                        const std::optional<ScaleWeights>& weights = std::nullopt);
std::size_t aggregate_dim(AggregateMode mode, std::size_t token_dim);

// Adaptive vector gate between a style embedding and a semantic embedding.
struct GateParams {
  Tensor ln_sty_gain, ln_sty_bias;  // [d_sty]
  Tensor ln_sem_gain, ln_sem_bias;  // [d_sem]
  Linear proj_sty, proj_sem;        // -> d_f
  Linear gate;                      // W_g [d_f, 2 d_f], b_g [d_f]
  Tensor ln_out_gain, ln_out_bias;  // [d_f]

  GateParams() = default;
  GateParams(std::size_t d_sty, std::size_t d_sem, std::size_t d_f, Rng& rng);
  ParamList parameters() const;
  std::size_t fused_dim() const { return gate.bias.size(0); }
};

struct FusionParts {
  Tensor z_sty, z_sem;  // projected inputs [B,d_f]
  Tensor gate;          // sigmoid(W_g [z_sty | z_sem] + b_g), [B,d_f]
  Tensor z_fus;         // g * z_sem + (1 - g) * z_sty
  Tensor fused;         // layer-normalized z_fus
};

FusionParts fuse_parts(const Tensor& f_sty, const Tensor& f_sem, const GateParams& params);
Tensor fuse(const Tensor& f_sty, const Tensor& f_sem, const GateParams& params);

// ---- linear probes ----

struct ProbeOptions {
  std::size_t epochs = 300;  // full-batch optimizer steps
  double lr = 1e-2;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
};

// Linear classifier on standardized embeddings. Standardization statistics
// come from the training embeddings and are part of the head.
struct ProbeHead {
  std::vector<double> mean, scale;  // per input dimension
  Linear linear;
  std::size_t classes = 0;

  Tensor logits(const Tensor& embeddings) const;
  std::vector<int> predict(const Tensor& embeddings) const;
};

ProbeHead probe_init(std::size_t dim, std::size_t classes, std::uint64_t seed);
// Cross-entropy training of a fresh head; embeddings [N,D] are treated as
// constants. epochs = 0 returns the initialized head.
ProbeHead probe_train(const Tensor& embeddings, const std::vector<int>& labels, std::size_t classes,
                      const ProbeOptions& opt);

struct ClassMetrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> f1;  // per class; NaN for classes absent from labels and predictions
};

// Macro-F1 averages the classes that occur in labels or predictions.
ClassMetrics classification_metrics(const std::vector<int>& predicted, const std::vector<int>& labels,
                                    std::size_t classes);
ClassMetrics probe_eval(const ProbeHead& head, const Tensor& embeddings, const std::vector<int>& labels);

// One independent head per attribute.
struct AttributeProbe {
  std::vector<std::string> names;
  std::vector<ProbeHead> heads;
};

struct MultiMetrics {
  std::vector<std::string> names;
  std::vector<ClassMetrics> per_attribute;
  double mean_accuracy = 0.0;
  double mean_f1 = 0.0;
};

AttributeProbe probe_train_multi(const Tensor& embeddings, const std::vector<std::string>& names,
                                 const std::vector<std::vector<int>>& labels, const std::vector<std::size_t>& classes,
                                 const ProbeOptions& opt);
MultiMetrics probe_eval_multi(const AttributeProbe& probe, const Tensor& embeddings,
                              const std::vector<std::vector<int>>& labels);

// learned: gate and head trained jointly. style/content: gate frozen at
// W_g = 0, b_g = -/+20 so the fused embedding follows one branch.
enum class GateRegime { Learned, Style, Content };
const char* gate_regime_name(GateRegime r);

struct FusionProbe {
  GateRegime regime = GateRegime::Learned;
  GateParams gate;
  ProbeHead head;  // applied to the fused embedding (identity standardization)
  std::vector<double> sty_mean, sty_scale, sem_mean, sem_scale;

  Tensor fused(const Tensor& f_sty, const Tensor& f_sem) const;
  std::vector<int> predict(const Tensor& f_sty, const Tensor& f_sem) const;
};

FusionProbe fusion_probe_train_regime(const Tensor& f_sty, const Tensor& f_sem, const std::vector<int>& labels,
                                      std::size_t classes, std::size_t fused_dim, const ProbeOptions& opt,
                                      GateRegime regime);

// holdout = 0 trains the learned regime. Otherwise a seeded holdout share of
// the labeled set scores each regime (ties favor learned, then style), and
// the winner is refit on all labeled samples.
FusionProbe fusion_probe_train(const Tensor& f_sty, const Tensor& f_sem, const std::vector<int>& labels,
                               std::size_t classes, std::size_t fused_dim, const ProbeOptions& opt,
                               double holdout = 0.0);
ClassMetrics fusion_probe_eval(const FusionProbe& probe, const Tensor& f_sty, const Tensor& f_sem,
                               const std::vector<int>& labels);

}  // namespace stylesplit
