#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "stylesplit/fusion_probe.hpp"
#include "stylesplit/training.hpp"

namespace stylesplit {

// One pretraining step as logged.
struct StepLog {
  std::size_t step = 0;  // index of the step just taken, from 0
  std::size_t round = 0;
  Phase phase = Phase::Stylize;
  std::size_t k_src = 0, k_tgt = 1;
  double seconds = 0.0;
  std::map<std::string, double> parts;
};

enum class Branch { Style, Content, Fusion };
enum class Target { Style, Content };
const char* branch_name(Branch b);
Branch parse_branch(const std::string& name);
const char* target_name(Target t);
Target parse_target(const std::string& name);

struct ProbeOutcome {
  Branch branch = Branch::Style;
  Target target = Target::Style;
  double fraction = 0.0;
  std::size_t n_train = 0, n_eval = 0;
  std::string aggregation;               // style-token aggregation used
  std::string gate_regime;               // fusion probes only
  std::vector<std::string> class_names;  // indexes metrics.f1
  ClassMetrics metrics;
};

// Identifies the run a record belongs to.
struct RunTag {
  std::string run;
  std::string variant = "full";
  std::uint64_t seed = 0;
};

// Append-only newline-delimited JSON. Every record carries its type and run
// tag, so the stream can be read back without the run configuration.
class MetricsStream {
 public:
  explicit MetricsStream(const std::filesystem::path& file);

  void step(const RunTag& tag, const StepLog& log);
  void probe(const RunTag& tag, const ProbeOutcome& outcome);
  void event(const RunTag& tag, const std::string& kind, const std::string& message);

  const std::filesystem::path& path() const { return path_; }

 private:
  void write_line(const std::string& line);

  std::filesystem::path path_;
  std::ofstream out_;
};

// Reads every record of a metrics file, or of all *.ndjson files under a
// directory, and renders Markdown tables: a training summary, the branch x
// target probe table, the ablation table (one row per variant with deltas
// against "full") and per-class F1 by variant. Malformed lines are counted
// and reported, not fatal.
std::string render_report(const std::filesystem::path& metrics);

}  // namespace stylesplit
