#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stylesplit/generator.hpp"
#include "stylesplit/jepa.hpp"
#include "stylesplit/objectives.hpp"

namespace stylesplit {

// ---- pseudo-domains and the round/phase cycle ----

struct PseudoDomainPartition {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> subsets;
};

// Seeded permutation split into k contiguous chunks whose sizes differ by
// at most one (the first n % k chunks get the extra element).
PseudoDomainPartition partition(std::size_t dataset_size, std::size_t k, std::uint64_t seed);

// (r mod K, (r+1) mod K)
std::pair<std::size_t, std::size_t> round_domains(std::size_t round, std::size_t k);

enum class Phase { Stylize, Diversify, Reconstruct };
const char* phase_name(Phase p);
Phase parse_phase(const std::string& name);

struct RoundPlan {
  std::size_t round = 0;
  std::size_t k_src = 0, k_tgt = 1;
  std::size_t steps_per_phase = 50;

  std::size_t steps_per_round() const { return 3 * steps_per_phase; }
};

RoundPlan make_round_plan(std::size_t round, std::size_t k, std::size_t steps_per_phase);
Phase phase_schedule(std::size_t step_in_round, const RoundPlan& plan);

// ---- contrastive memory ----

// FIFO store of unit-norm key embeddings, oldest first.
class NegativeQueue {
 public:
  NegativeQueue() = default;
  NegativeQueue(std::size_t capacity, std::size_t dim);

  // Appends each row of keys [B,D] (re-normalized), evicting the oldest.
  void enqueue(const Tensor& keys);
  void enqueue_row(std::span<const double> key);
  std::size_t size() const { return rows_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  // [size, D] constant tensor, or undefined when empty.
  Tensor as_tensor() const;
  const std::deque<std::vector<double>>& rows() const { return rows_; }
  void clear() { rows_.clear(); }
  // Replaces the contents verbatim (checkpoint reload); no re-normalization.
  void restore(std::deque<std::vector<double>> rows);

 private:
  std::size_t capacity_ = 0, dim_ = 0;
  std::deque<std::vector<double>> rows_;
};

// ---- style bank and replay ----

// Single-sample detached style bundle.
struct BankEntry {
  std::array<Tensor, kScales> maps;    // [1,C_i,h,w]
  std::array<Tensor, kScales> tokens;  // [1,d_t]
  Tensor global;                       // [1,d_t]
};

// Stylized image with the source it was produced from.
struct ReplayEntry {
  Tensor stylized;  // [1,3,S,S]
  Tensor source;    // [1,3,S,S]
};

// Fixed-capacity FIFO stores. Once full, the oldest entry is overwritten,
// so sampling stays uniform over the current contents.
class StyleBank {
 public:
  StyleBank() = default;
  StyleBank(std::size_t bundle_capacity, std::size_t replay_capacity);

  void push_bundles(const StyleBundle& bundle);
  void push_replay(const Tensor& stylized, const Tensor& sources);
  // Uniform draws with replacement, batched.
  StyleBundle sample_bundles(std::size_t count, Rng& rng) const;
  std::pair<Tensor, Tensor> sample_replay(std::size_t count, Rng& rng) const;

  std::size_t size() const { return bundles_.size(); }
  std::size_t replay_size() const { return replay_.size(); }
  std::size_t capacity() const { return bundle_capacity_; }
  std::size_t replay_capacity() const { return replay_capacity_; }
  bool empty() const { return bundles_.empty(); }

  const std::deque<BankEntry>& bundles() const { return bundles_; }
  const std::deque<ReplayEntry>& replay() const { return replay_; }
  void restore(std::deque<BankEntry> bundles, std::deque<ReplayEntry> replay);

 private:
  std::size_t bundle_capacity_ = 0, replay_capacity_ = 0;
  std::deque<BankEntry> bundles_;
  std::deque<ReplayEntry> replay_;
};

// alpha * a + (1 - alpha) * b over maps, tokens and global token.
StyleBundle mix_bundles(const StyleBundle& a, const StyleBundle& b, double alpha);
StyleBundle detach_bundle(const StyleBundle& b);

// ---- views and the momentum encoder ----

struct AugmentConfig {
  std::size_t max_shift = 0;  // random translation in pixels, edge-clamped
  bool flip = false;          // horizontal flip with probability 1/2
  double brightness = 0.0;    // additive offset ~ U(-b, b)
  double contrast = 0.0;      // gain ~ U(1-c, 1+c) around the image mean
  double saturation = 0.0;    // chroma gain ~ U(1-s, 1+s)
  double channel_gain = 0.0;  // per-channel gain ~ U(1-g, 1+g)

  bool identity() const;
};

// Per-sample photometric/geometric augmentation; values clamped to [-1,1].
// An identity config returns an exact copy without consuming randomness.
Tensor augment(const Tensor& x, const AugmentConfig& cfg, Rng& rng);

enum class PositiveMode { Augment, Stylize, Both };
const char* positive_mode_name(PositiveMode m);
PositiveMode parse_positive_mode(const std::string& name);

struct PositivePair {
  Tensor query, key;
  PositiveMode used = PositiveMode::Augment;  // after any fallback
};

// x_q = augment(x); x_k by mode from augmentation, stylization with bank
// samples, or stylization of an augmented view. An empty bank falls back to
// augmentation and reports through `log` when given.
PositivePair make_positive_pair(const Tensor& x, PositiveMode mode, const StyleBank& bank,
                                const ContentEncoder& content, const Generator& gen, const AugmentConfig& aug,
                                Rng& rng, const std::function<void(const std::string&)>& log = {});

// Unit-norm key embeddings from the momentum encoder; never recorded.
Tensor moco_keys(const Tensor& x_view, const ContentEncoder& key_encoder);

// theta_k <- m * theta_k + (1 - m) * theta_q, m in [0,1].
void ema_update(const ParamList& target, const ParamList& source, double momentum);

// ---- the pretraining step ----

struct TrainConfig {
  ArchConfig arch;
  LossWeights weights;
  std::size_t domains = 2;            // K
  std::size_t steps_per_phase = 50;
  std::size_t batch = 16;
  double tau = 0.2;                   // info_nce and patch_nce temperature
  double moco_momentum = 0.99;
  double teacher_momentum = 0.99;
  std::size_t queue_capacity = 1024;
  std::size_t bank_capacity = 256;
  std::size_t replay_capacity = 256;
  double mix_low = 0.3, mix_high = 0.7;
  JepaOptions style_jepa{};           // 6-token scale sequence
  JepaOptions content_jepa{0.5};      // spatial s5 tokens
  std::size_t predictor_hidden = 256;
  std::size_t patch_positions = 64;   // per layer
  std::size_t swd_projections = 32;
  AdamOptions opt_gen{};
  AdamOptions opt_disc{};
  PositiveMode positive_mode = PositiveMode::Both;
  AugmentConfig augment{2, true, 0.2, 0.2, 0.3, 0.1};
};

// Every mutable piece of a pretraining run.
struct TrainState {
  TrainState() = default;
  TrainState(TrainState&&) = default;
  TrainState& operator=(TrainState&&) = default;
  // Copies would alias parameter storage.
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;

  TrainConfig cfg;
  ContentEncoder content;      // query encoder
  ContentEncoder content_key;  // momentum copy: MoCo keys and content masked-prediction targets
  StyleEncoder style;
  StyleEncoder style_teacher;  // momentum copy: style masked-prediction targets
  Generator gen;
  Discriminator disc;
  Predictor style_pred, content_pred;
  Adam opt_g, opt_d;
  NegativeQueue queue;
  StyleBank bank;
  std::size_t step = 0;  // optimizer steps taken
  Rng rng;

  // Parameters updated by the generator-side optimizer, in a fixed order.
  ParamList trainable() const;
  ParamList key_params() const;
  ParamList teacher_params() const;
  // Every parameter array, prefixed by role ("content.", "key.", ...).
  ParamList all_params() const;
};

// Builds fresh modules from cfg; momentum copies start equal to their
// students.
TrainState init_state(const TrainConfig& cfg, std::uint64_t seed);

// Gradient-flow inspection results for one step (filled when auditing).
struct StepAudit {
  double teacher_grad = 0.0;      // style teacher parameters
  double key_grad = 0.0;          // momentum content encoder parameters
  double target_grad = 0.0;       // masked-prediction target tensors
  double queue_grad = 0.0;        // materialized queue tensor
  double disc_grad_in_gen = 0.0;  // discriminator during the generator backprop
  bool gen_grads_untouched_by_disc = true;
};

struct StepResult {
  Phase phase = Phase::Stylize;
  std::map<std::string, double> parts;  // unweighted term values plus "total" and "disc"
  StepAudit audit;
};

struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(const std::string& component)
      : std::runtime_error("non-finite loss in component '" + component + "'"), component(component) {}
  std::string component;
};

// One optimizer step in the given phase. x: source-domain batch, y:
// target-domain batch. On a non-finite loss nothing is updated and
// NonFiniteLoss names the component. With audit set, frozen parameters are
// temporarily marked differentiable so any leak would show up in
// StepResult::audit.
StepResult training_step(const Tensor& x, const Tensor& y, Phase phase, TrainState& state, bool audit = false);

}  // namespace stylesplit
