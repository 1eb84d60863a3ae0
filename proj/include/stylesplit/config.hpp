#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "stylesplit/dataset.hpp"
#include "stylesplit/fusion_probe.hpp"
#include "stylesplit/training.hpp"

namespace stylesplit {

// Raised for malformed or out-of-range configuration; the message starts
// with the dotted field name.
struct ConfigError : std::invalid_argument {
  ConfigError(const std::string& field, const std::string& why)
      : std::invalid_argument(field + ": " + why), field(field) {}
  std::string field;
};

struct ProbeConfig {
  AggregateMode aggregation = AggregateMode::Mean;
  std::optional<ScaleWeights> scale_weights;  // required by the weighted mode
  double fraction = 0.10;                     // labeled share of the dataset
  std::size_t fused_dim = 128;
  double fusion_holdout = 0.2;  // labeled share that selects the fusion gate regime
  std::size_t eval_limit = 0;  // cap on held-out samples; 0 = all
  ProbeOptions options{};
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t samples = 10000;
  DatasetConfig data{};
  TrainConfig train{};
  std::size_t steps = 5000;
  ProbeConfig probe{};
  std::size_t log_every = 1;
  std::size_t checkpoint_every = 1000;

  // Throws ConfigError naming the first field outside its documented range.
  void validate() const;
};

// Environment variable that overrides RunConfig::seed.
inline constexpr const char* kSeedEnvVar = "STYLESPLIT_SEED";

// JSON with comments. Missing fields keep their defaults; unknown fields
// are rejected.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
// Applies the seed override when the variable is set; returns true if so.
bool apply_env_overrides(RunConfig& cfg);
// Canonical JSON (no comments) that parses back to the same config.
std::string run_config_to_json(const RunConfig& cfg);

// Parses "no-fft,no-jepa" style lists; each variant zeroes the named terms.
struct Variant {
  std::string name;
  std::vector<std::string> disabled_terms;
};
Variant parse_variant(const std::string& name);
RunConfig apply_variant(const RunConfig& base, const Variant& v);

}  // namespace stylesplit
