#include "stylesplit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

namespace stylesplit {

namespace fs = std::filesystem;
using nlohmann::json;

const char* branch_name(Branch b) {
  switch (b) {
    case Branch::Style:
      return "style";
    case Branch::Content:
      return "content";
    case Branch::Fusion:
      return "fusion";
  }
  return "?";
}

Branch parse_branch(const std::string& name) {
  if (name == "style") return Branch::Style;
  if (name == "content") return Branch::Content;
  if (name == "fusion") return Branch::Fusion;
  throw std::invalid_argument("unknown branch '" + name + "' (style|content|fusion)");
}

const char* target_name(Target t) { return t == Target::Style ? "style" : "content"; }

Target parse_target(const std::string& name) {
  if (name == "style") return Target::Style;
  if (name == "content") return Target::Content;
  throw std::invalid_argument("unknown target '" + name + "' (style|content)");
}

namespace {

json tag_json(const RunTag& tag, const char* type) {
  return {{"type", type}, {"run", tag.run}, {"variant", tag.variant}, {"seed", tag.seed}};
}

// Non-finite doubles are not representable in JSON; they are logged as null.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

MetricsStream::MetricsStream(const fs::path& file) : path_(file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  out_.open(file, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open metrics stream " + file.string());
}

void MetricsStream::write_line(const std::string& line) {
  out_ << line << '\n';
  out_.flush();
}

void MetricsStream::step(const RunTag& tag, const StepLog& log) {
  json j = tag_json(tag, "step");
  j["step"] = log.step;
  j["round"] = log.round;
  j["phase"] = phase_name(log.phase);
  j["k_src"] = log.k_src;
  j["k_tgt"] = log.k_tgt;
  j["seconds"] = log.seconds;
  json parts = json::object();
  for (const auto& [k, v] : log.parts) parts[k] = number(v);
  j["parts"] = parts;
  write_line(j.dump());
}

void MetricsStream::probe(const RunTag& tag, const ProbeOutcome& o) {
  json j = tag_json(tag, "probe");
  j["branch"] = branch_name(o.branch);
  j["target"] = target_name(o.target);
  j["fraction"] = o.fraction;
  j["n_train"] = o.n_train;
  j["n_eval"] = o.n_eval;
  j["aggregation"] = o.aggregation;
  if (!o.gate_regime.empty()) j["gate_regime"] = o.gate_regime;
  j["accuracy"] = o.metrics.accuracy;
  j["macro_f1"] = o.metrics.macro_f1;
  json f1 = json::array();
  for (double v : o.metrics.f1) f1.push_back(number(v));
  j["f1"] = f1;
  j["classes"] = o.class_names;
  write_line(j.dump());
}

void MetricsStream::event(const RunTag& tag, const std::string& kind, const std::string& message) {
  json j = tag_json(tag, "event");
  j["kind"] = kind;
  j["message"] = message;
  write_line(j.dump());
}

// ---- report ----

namespace {

struct Stat {
  std::vector<double> values;
  void add(double v) { values.push_back(v); }
  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return values.empty() ? std::nan("") : s / static_cast<double>(values.size());
  }
  double stddev() const {
    if (values.size() < 2) return 0.0;
    double m = mean(), s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
  }
};

std::string fmt(double v, int digits = 2) {
  if (!std::isfinite(v)) return "n/a";
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

std::string signed_fmt(double v) { return (v >= 0 ? "+" : "") + fmt(v); }

std::string pct(const Stat& s) {
  std::string out = fmt(100.0 * s.mean());
  if (s.values.size() > 1) out += " ± " + fmt(100.0 * s.stddev());
  return out;
}

std::vector<fs::path> metric_files(const fs::path& p) {
  std::vector<fs::path> out;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file() && e.path().extension() == ".ndjson") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
  } else if (fs::exists(p)) {
    out.push_back(p);
  } else {
    throw std::runtime_error("no metrics at " + p.string());
  }
  return out;
}

// Variants in a stable order with the baseline first.
std::vector<std::string> ordered_variants(const std::set<std::string>& seen) {
  std::vector<std::string> out;
  if (seen.count("full")) out.push_back("full");
  for (const auto& v : seen)
    if (v != "full") out.push_back(v);
  return out;
}

}  // namespace

std::string render_report(const fs::path& metrics) {
  std::vector<json> steps, probes;
  std::size_t malformed = 0, events = 0;
  for (const auto& file : metric_files(metrics)) {
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("type")) {
        ++malformed;
        continue;
      }
      auto type = j["type"].get<std::string>();
      if (type == "step") {
        steps.push_back(std::move(j));
      } else if (type == "probe") {
        probes.push_back(std::move(j));
      } else {
        ++events;
      }
    }
  }

  std::ostringstream md;
  md << "# Run report\n\n";
  md << "Records: " << steps.size() << " steps, " << probes.size() << " probes, " << events << " events";
  if (malformed) md << ", " << malformed << " malformed lines skipped";
  md << ".\n\n";

  if (!steps.empty()) {
    // Mean of each loss part over the last 10% of every run's steps.
    std::map<std::string, std::vector<const json*>> by_run;
    for (const auto& s : steps) by_run[s["run"].get<std::string>()].push_back(&s);
    std::set<std::string> part_names;
    for (const auto& s : steps)
      for (auto it = s["parts"].begin(); it != s["parts"].end(); ++it) part_names.insert(it.key());
    md << "## Training summary\n\nMean loss parts over the final 10% of logged steps.\n\n| Run | Steps | s/step |";
    for (const auto& p : part_names) md << ' ' << p << " |";
    md << "\n|---|---|---|";
    for (std::size_t i = 0; i < part_names.size(); ++i) md << "---|";
    md << '\n';
    for (const auto& [run, recs] : by_run) {
      std::size_t tail = std::max<std::size_t>(1, recs.size() / 10);
      std::map<std::string, Stat> acc;
      Stat secs;
      for (std::size_t i = recs.size() - tail; i < recs.size(); ++i) {
        const json& r = *recs[i];
        secs.add(r.value("seconds", 0.0));
        for (auto it = r["parts"].begin(); it != r["parts"].end(); ++it) {
          if (it->is_number()) acc[it.key()].add(it->get<double>());
        }
      }
      md << "| " << run << " | " << recs.size() << " | " << fmt(secs.mean(), 3) << " |";
      for (const auto& p : part_names) md << ' ' << (acc.count(p) ? fmt(acc[p].mean(), 4) : "") << " |";
      md << '\n';
    }
    md << '\n';
  }

  if (!probes.empty()) {
    // Branch x target accuracy, full objective only, averaged over seeds.
    std::map<std::tuple<std::string, std::string, double>, std::pair<Stat, Stat>> cells;
    std::set<std::string> variants_seen;
    for (const auto& p : probes) {
      auto variant = p.value("variant", std::string("full"));
      variants_seen.insert(variant);
      if (variant != "full") continue;
      auto& c = cells[{p["branch"].get<std::string>(), p["target"].get<std::string>(), p["fraction"].get<double>()}];
      c.first.add(p["accuracy"].get<double>());
      c.second.add(p["macro_f1"].get<double>());
    }
    if (!cells.empty()) {
      md << "## Linear probes on frozen embeddings\n\nAccuracy and macro-F1 in percent (mean ± std over seeds).\n\n";
      md << "| Branch | Target | Labeled fraction | Runs | Accuracy | Macro-F1 |\n|---|---|---|---|---|---|\n";
      for (const auto& [key, c] : cells) {
        const auto& [branch, target, fraction] = key;
        md << "| " << branch << " | " << target << " | " << fmt(100.0 * fraction, 0) << "% | " << c.first.values.size()
           << " | " << pct(c.first) << " | " << pct(c.second) << " |\n";
      }
      md << '\n';
    }

    auto variants = ordered_variants(variants_seen);
    if (variants.size() > 1 || (variants.size() == 1 && variants[0] != "full")) {
      // Style probe on the style branch per variant.
      std::map<std::string, std::pair<Stat, Stat>> rows;
      std::map<std::string, std::map<std::string, Stat>> class_f1;  // class -> variant -> F1
      std::vector<std::string> class_order;
      for (const auto& p : probes) {
        if (p["branch"] != "style" || p["target"] != "style") continue;
        auto variant = p.value("variant", std::string("full"));
        rows[variant].first.add(p["accuracy"].get<double>());
        rows[variant].second.add(p["macro_f1"].get<double>());
        const auto& names = p["classes"];
        const auto& f1 = p["f1"];
        for (std::size_t i = 0; i < names.size() && i < f1.size(); ++i) {
          auto name = names[i].get<std::string>();
          if (std::find(class_order.begin(), class_order.end(), name) == class_order.end()) class_order.push_back(name);
          if (f1[i].is_number()) class_f1[name][variant].add(f1[i].get<double>());
        }
      }
      double base_acc = rows.count("full") ? rows["full"].first.mean() : std::nan("");
      double base_f1 = rows.count("full") ? rows["full"].second.mean() : std::nan("");
      md << "## Ablation\n\nStyle-branch probe predicting the style label (percent, mean over seeds).\n\n";
      md << "| Configuration | Runs | Accuracy | ΔAccuracy | Macro-F1 | ΔF1 |\n|---|---|---|---|---|---|\n";
      for (const auto& v : variants) {
        if (!rows.count(v)) continue;
        const auto& r = rows[v];
        md << "| " << v << " | " << r.first.values.size() << " | " << fmt(100.0 * r.first.mean()) << " | "
           << signed_fmt(100.0 * (r.first.mean() - base_acc)) << " | " << fmt(100.0 * r.second.mean()) << " | "
           << signed_fmt(100.0 * (r.second.mean() - base_f1)) << " |\n";
      }
      md << "\n## Per-class F1 by configuration\n\n| Class |";
      for (const auto& v : variants) md << ' ' << v << " |";
      md << "\n|---|";
      for (std::size_t i = 0; i < variants.size(); ++i) md << "---|";
      md << '\n';
      for (const auto& name : class_order) {
        md << "| " << name << " |";
        for (const auto& v : variants) {
          auto it = class_f1[name].find(v);
          md << ' ' << (it == class_f1[name].end() ? "n/a" : fmt(it->second.mean(), 4)) << " |";
        }
        md << '\n';
      }
      md << "| Average |";
      for (const auto& v : variants) md << ' ' << (rows.count(v) ? fmt(rows[v].second.mean(), 4) : "n/a") << " |";
      md << "\n\n";
    }
  }
  return md.str();
}

}  // namespace stylesplit
