#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "stylesplit/checkpoint.hpp"
#include "stylesplit/config.hpp"
#include "stylesplit/dataset.hpp"
#include "stylesplit/metrics.hpp"

namespace stylesplit {

// Seeds for the run's derived streams, so the partition and the probe split
// do not depend on how many draws model initialization consumed.
std::uint64_t partition_seed(std::uint64_t run_seed);
std::uint64_t split_seed(std::uint64_t run_seed);

struct PretrainStep {
  StepLog log;
  StepAudit audit;
};

// Drives training_step over a fixed pseudo-domain partition of a dataset,
// following the round/phase schedule. Batches are drawn with replacement
// from the round's source and target domains using the state's generator.
class Pretrainer {
 public:
  Pretrainer(const RunConfig& cfg, const std::vector<SyntheticSample>& data);
  // Resumes a checkpoint; `data` must be the dataset the run was started on.
  Pretrainer(LoadedCheckpoint checkpoint, const std::vector<SyntheticSample>& data);

  // Takes the next scheduled step. Throws NonFiniteLoss without advancing.
  PretrainStep step(bool audit = false);
  RoundPlan plan_for(std::size_t step) const;

  const RunConfig& config() const { return cfg_; }
  const PseudoDomainPartition& domains() const { return partition_; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }

 private:
  std::vector<std::size_t> draw(const std::vector<std::size_t>& pool);

  RunConfig cfg_;
  const std::vector<SyntheticSample>* data_;
  PseudoDomainPartition partition_;
  TrainState state_;
};

struct PretrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(std::size_t step)> on_checkpoint;  // after `step` steps
  std::function<void(const std::string& kind, const std::string& message)> on_event;
  std::size_t max_consecutive_failures = 10;
};

// Runs until state().step == total_steps. A step with a non-finite loss is
// skipped (reported through on_event); too many in a row abort the run.
void pretrain(Pretrainer& trainer, std::size_t total_steps, const PretrainHooks& hooks = {});

// Frozen embeddings of a dataset subset.
struct Embeddings {
  Tensor style;    // aggregated style tokens
  Tensor content;  // pooled deepest content features
  std::vector<int> style_labels, content_labels;

  std::size_t size() const { return style_labels.size(); }
};

Embeddings extract_embeddings(const TrainState& state, const std::vector<SyntheticSample>& data,
                              const std::vector<std::size_t>& indices, const ProbeConfig& probe,
                              std::size_t chunk = 64);

struct ProbeSplit {
  std::vector<std::size_t> train, eval;
};

// Seeded split: round(fraction * n) labeled samples (at least one), the rest
// held out for evaluation, optionally capped at eval_limit.
ProbeSplit labeled_split(std::size_t n, double fraction, std::uint64_t seed, std::size_t eval_limit = 0);

ProbeOutcome run_probe(Branch branch, Target target, const Embeddings& train, const Embeddings& eval,
                       const ProbeConfig& probe, const DatasetConfig& data);

struct ExperimentOptions {
  std::filesystem::path out_dir;  // checkpoints and metrics; empty writes nothing
  std::vector<std::pair<Branch, Target>> probes = {
      {Branch::Style, Target::Style},     {Branch::Style, Target::Content}, {Branch::Content, Target::Content},
      {Branch::Content, Target::Style},   {Branch::Fusion, Target::Style},  {Branch::Fusion, Target::Content}};
  std::function<void(const std::string&)> log;
};

struct ExperimentResult {
  RunTag tag;
  std::vector<ProbeOutcome> probes;
  double pretrain_seconds = 0.0;

  const ProbeOutcome& find(Branch b, Target t) const;
};

// Pretrain for cfg.steps, then probe every requested branch/target pair at
// cfg.probe.fraction.
ExperimentResult run_experiment(const RunConfig& cfg, const RunTag& tag, const std::vector<SyntheticSample>& data,
                                const ExperimentOptions& opt = {}, MetricsStream* metrics = nullptr);

// One experiment per (seed, variant). The baseline "full" is always run and
// every variant of a seed shares that seed's dataset and initialization.
std::vector<ExperimentResult> run_ablation(const RunConfig& base, const std::vector<Variant>& variants,
                                           const std::vector<std::uint64_t>& seeds, const ExperimentOptions& opt = {},
                                           MetricsStream* metrics = nullptr);

}  // namespace stylesplit
