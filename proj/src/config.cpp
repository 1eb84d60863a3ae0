#include "stylesplit/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace stylesplit {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and remembers which ones were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const json& at(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void read(const std::string& key, double& dst) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(field(key), "expected a number");
    dst = v.get<double>();
    if (!std::isfinite(dst)) throw ConfigError(field(key), "must be finite");
  }

  void read(const std::string& key, std::size_t& dst) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(field(key), "expected a non-negative integer");
    }
    dst = v.get<std::size_t>();
  }

  void read(const std::string& key, std::uint64_t& dst, bool) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(field(key), "expected a non-negative integer");
    }
    dst = v.get<std::uint64_t>();
  }

  void read(const std::string& key, bool& dst) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(field(key), "expected true or false");
    dst = v.get<bool>();
  }

  void read(const std::string& key, std::string& dst) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(field(key), "expected a string");
    dst = v.get<std::string>();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw ConfigError(field, why);
}

std::size_t masked_count(double ratio, std::size_t seq_len) {
  return static_cast<std::size_t>(std::max(1L, std::lround(ratio * static_cast<double>(seq_len))));
}

}  // namespace

void RunConfig::validate() const {
  const auto& a = train.arch;
  require(data.image_size == a.image_size, "data.image_size", "must equal the model resolution");
  require(a.image_size >= 32 && a.image_size % 16 == 0, "data.image_size", "must be a multiple of 16 and >= 32");
  require(data.content_classes >= 2 && data.content_classes <= kContentClasses, "data.content_classes",
          "must lie in [2," + std::to_string(kContentClasses) + "]");
  require(data.style_classes >= 2 && data.style_classes <= kStyleClasses, "data.style_classes",
          "must lie in [2," + std::to_string(kStyleClasses) + "]");
  require(samples >= train.domains * 2, "data.samples", "must hold at least two images per pseudo-domain");

  require(a.base_channels >= 1, "model.base_channels", "must be >= 1");
  require(a.token_dim >= 1, "model.token_dim", "must be >= 1");
  require(a.content_embed_dim >= 1, "model.content_embed_dim", "must be >= 1");
  require(a.disc_channels >= 1, "model.disc_channels", "must be >= 1");
  require(train.predictor_hidden >= 1, "model.predictor_hidden", "must be >= 1");

  for (const auto& [name, value] : train.weights.named()) {
    require(value >= 0.0 && std::isfinite(value), "weights." + name, "must be a finite value >= 0");
  }

  require(train.batch >= 2, "train.batch", "must be >= 2");
  require(train.domains >= 2, "train.domains", "K must be >= 2");
  require(train.steps_per_phase >= 1, "train.steps_per_phase", "must be >= 1");
  require(train.tau > 0, "train.tau", "temperature must be > 0");
  require(train.moco_momentum >= 0 && train.moco_momentum < 1, "train.moco_momentum", "must lie in [0,1)");
  require(train.teacher_momentum >= 0 && train.teacher_momentum < 1, "train.teacher_momentum", "must lie in [0,1)");
  require(train.queue_capacity >= 1, "train.queue_capacity", "must be >= 1");
  require(train.bank_capacity >= 1, "train.bank_capacity", "must be >= 1");
  require(train.replay_capacity >= 1, "train.replay_capacity", "must be >= 1");
  require(train.mix_low >= 0 && train.mix_low <= train.mix_high && train.mix_high <= 1, "train.mix_low",
          "need 0 <= mix_low <= mix_high <= 1");
  require(train.patch_positions >= 1, "train.patch_positions", "must be >= 1");
  require(train.swd_projections >= 1, "train.swd_projections", "must be >= 1");
  require(train.opt_gen.lr > 0, "train.lr_gen", "must be > 0");
  require(train.opt_disc.lr > 0, "train.lr_disc", "must be > 0");
  require(train.opt_gen.beta1 >= 0 && train.opt_gen.beta1 < 1, "train.beta1", "must lie in [0,1)");
  require(train.opt_gen.beta2 >= 0 && train.opt_gen.beta2 < 1, "train.beta2", "must lie in [0,1)");

  std::size_t s5 = a.image_size / 16;
  auto check_jepa = [&](const JepaOptions& j, const std::string& key, std::size_t seq) {
    require(j.mask_ratio > 0 && j.mask_ratio < 1, "jepa." + key + "_mask_ratio", "ratio must lie in (0,1)");
    require(masked_count(j.mask_ratio, seq) < seq, "jepa." + key + "_mask_ratio",
            "would hide every one of the " + std::to_string(seq) + " tokens");
  };
  check_jepa(train.style_jepa, "style", kScales + 1);
  check_jepa(train.content_jepa, "content", s5 * s5);
  require(train.style_jepa.lambda_var >= 0, "jepa.lambda_var", "must be >= 0");
  require(train.style_jepa.lambda_cov >= 0, "jepa.lambda_cov", "must be >= 0");
  require(train.style_jepa.target_std > 0, "jepa.target_std", "must be > 0");
  require(train.style_jepa.var_eps > 0, "jepa.var_eps", "must be > 0");

  const auto& g = train.augment;
  require(g.max_shift <= a.image_size / 4, "augment.max_shift", "must be <= image_size / 4");
  require(g.brightness >= 0 && g.brightness <= 1, "augment.brightness", "must lie in [0,1]");
  require(g.contrast >= 0 && g.contrast < 1, "augment.contrast", "must lie in [0,1)");
  require(g.saturation >= 0 && g.saturation <= 1, "augment.saturation", "must lie in [0,1]");
  require(g.channel_gain >= 0 && g.channel_gain < 1, "augment.channel_gain", "must lie in [0,1)");

  require(probe.fraction > 0 && probe.fraction < 1, "probe.fraction", "must lie in (0,1)");
  require(probe.options.lr > 0, "probe.lr", "must be > 0");
  require(probe.options.weight_decay >= 0, "probe.weight_decay", "must be >= 0");
  require(probe.fused_dim >= 1, "probe.fused_dim", "must be >= 1");
  require(probe.fusion_holdout >= 0 && probe.fusion_holdout < 1, "probe.fusion_holdout", "must lie in [0,1)");
  if (probe.aggregation == AggregateMode::Weighted) {
    require(probe.scale_weights.has_value(), "probe.scale_weights", "required by the weighted aggregation");
  }
  require(log_every >= 1, "output.log_every", "must be >= 1");
}

RunConfig parse_run_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  RunConfig c;
  Section top(root, "");
  top.read("seed", c.seed, true);

  if (top.has("data")) {
    Section s(top.at("data"), "data");
    s.read("samples", c.samples);
    s.read("image_size", c.data.image_size);
    s.read("content_classes", c.data.content_classes);
    s.read("style_classes", c.data.style_classes);
    s.finish();
  }
  c.train.arch.image_size = c.data.image_size;

  if (top.has("model")) {
    Section s(top.at("model"), "model");
    s.read("base_channels", c.train.arch.base_channels);
    s.read("token_dim", c.train.arch.token_dim);
    s.read("content_embed_dim", c.train.arch.content_embed_dim);
    s.read("disc_channels", c.train.arch.disc_channels);
    s.read("predictor_hidden", c.train.predictor_hidden);
    s.finish();
  }

  if (top.has("weights")) {
    Section s(top.at("weights"), "weights");
    for (const auto& [name, value] : c.train.weights.named()) {
      double v = value;
      s.read(name, v);
      c.train.weights.set(name, v);
    }
    s.finish();
  }

  if (top.has("train")) {
    Section s(top.at("train"), "train");
    auto& t = c.train;
    s.read("steps", c.steps);
    s.read("batch", t.batch);
    s.read("domains", t.domains);
    s.read("steps_per_phase", t.steps_per_phase);
    s.read("tau", t.tau);
    s.read("moco_momentum", t.moco_momentum);
    s.read("teacher_momentum", t.teacher_momentum);
    s.read("queue_capacity", t.queue_capacity);
    s.read("bank_capacity", t.bank_capacity);
    s.read("replay_capacity", t.replay_capacity);
    s.read("mix_low", t.mix_low);
    s.read("mix_high", t.mix_high);
    s.read("patch_positions", t.patch_positions);
    s.read("swd_projections", t.swd_projections);
    s.read("lr_gen", t.opt_gen.lr);
    s.read("lr_disc", t.opt_disc.lr);
    double b1 = t.opt_gen.beta1, b2 = t.opt_gen.beta2;
    s.read("beta1", b1);
    s.read("beta2", b2);
    t.opt_gen.beta1 = t.opt_disc.beta1 = b1;
    t.opt_gen.beta2 = t.opt_disc.beta2 = b2;
    std::string mode = positive_mode_name(t.positive_mode);
    s.read("positive_mode", mode);
    try {
      t.positive_mode = parse_positive_mode(mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("train.positive_mode", e.what());
    }
    s.finish();
  }

  if (top.has("jepa")) {
    Section s(top.at("jepa"), "jepa");
    auto& st = c.train.style_jepa;
    s.read("style_mask_ratio", st.mask_ratio);
    s.read("content_mask_ratio", c.train.content_jepa.mask_ratio);
    s.read("lambda_var", st.lambda_var);
    s.read("lambda_cov", st.lambda_cov);
    s.read("target_std", st.target_std);
    s.read("var_eps", st.var_eps);
    s.finish();
  }
  auto& cj = c.train.content_jepa;
  const auto& sj = c.train.style_jepa;
  cj.lambda_var = sj.lambda_var;
  cj.lambda_cov = sj.lambda_cov;
  cj.target_std = sj.target_std;
  cj.var_eps = sj.var_eps;

  if (top.has("augment")) {
    Section s(top.at("augment"), "augment");
    auto& g = c.train.augment;
    s.read("max_shift", g.max_shift);
    s.read("flip", g.flip);
    s.read("brightness", g.brightness);
    s.read("contrast", g.contrast);
    s.read("saturation", g.saturation);
    s.read("channel_gain", g.channel_gain);
    s.finish();
  }

  if (top.has("probe")) {
    Section s(top.at("probe"), "probe");
    auto& p = c.probe;
    std::string mode = aggregate_mode_name(p.aggregation);
    s.read("aggregation", mode);
    try {
      p.aggregation = parse_aggregate_mode(mode);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("probe.aggregation", e.what());
    }
    if (s.has("scale_weights")) {
      const json& w = s.at("scale_weights");
      if (!w.is_array() || w.size() != kScales + 1) {
        throw ConfigError("probe.scale_weights", "expected 6 numbers (w_G, w_1..w_5)");
      }
      ScaleWeights sw;
      for (std::size_t i = 0; i < sw.size(); ++i) {
        if (!w[i].is_number()) throw ConfigError("probe.scale_weights", "expected numbers");
        sw[i] = w[i].get<double>();
      }
      p.scale_weights = sw;
    }
    s.read("fraction", p.fraction);
    s.read("fused_dim", p.fused_dim);
    s.read("fusion_holdout", p.fusion_holdout);
    s.read("eval_limit", p.eval_limit);
    s.read("epochs", p.options.epochs);
    s.read("lr", p.options.lr);
    s.read("weight_decay", p.options.weight_decay);
    s.finish();
  }

  if (top.has("output")) {
    Section s(top.at("output"), "output");
    s.read("log_every", c.log_every);
    s.read("checkpoint_every", c.checkpoint_every);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

bool apply_env_overrides(RunConfig& cfg) {
  const char* v = std::getenv(kSeedEnvVar);
  if (!v || !*v) return false;
  char* end = nullptr;
  unsigned long long seed = std::strtoull(v, &end, 10);
  if (*end != '\0') throw ConfigError(kSeedEnvVar, std::string("not an unsigned integer: '") + v + "'");
  cfg.seed = seed;
  return true;
}

std::string run_config_to_json(const RunConfig& c) {
  const auto& t = c.train;
  json j;
  j["seed"] = c.seed;
  j["data"] = {{"samples", c.samples},
               {"image_size", c.data.image_size},
               {"content_classes", c.data.content_classes},
               {"style_classes", c.data.style_classes}};
  j["model"] = {{"base_channels", t.arch.base_channels},
                {"token_dim", t.arch.token_dim},
                {"content_embed_dim", t.arch.content_embed_dim},
                {"disc_channels", t.arch.disc_channels},
                {"predictor_hidden", t.predictor_hidden}};
  json w = json::object();
  for (const auto& [name, value] : t.weights.named()) w[name] = value;
  j["weights"] = w;
  j["train"] = {{"steps", c.steps},
                {"batch", t.batch},
                {"domains", t.domains},
                {"steps_per_phase", t.steps_per_phase},
                {"tau", t.tau},
                {"moco_momentum", t.moco_momentum},
                {"teacher_momentum", t.teacher_momentum},
                {"queue_capacity", t.queue_capacity},
                {"bank_capacity", t.bank_capacity},
                {"replay_capacity", t.replay_capacity},
                {"mix_low", t.mix_low},
                {"mix_high", t.mix_high},
                {"patch_positions", t.patch_positions},
                {"swd_projections", t.swd_projections},
                {"lr_gen", t.opt_gen.lr},
                {"lr_disc", t.opt_disc.lr},
                {"beta1", t.opt_gen.beta1},
                {"beta2", t.opt_gen.beta2},
                {"positive_mode", positive_mode_name(t.positive_mode)}};
  j["jepa"] = {{"style_mask_ratio", t.style_jepa.mask_ratio},
               {"content_mask_ratio", t.content_jepa.mask_ratio},
               {"lambda_var", t.style_jepa.lambda_var},
               {"lambda_cov", t.style_jepa.lambda_cov},
               {"target_std", t.style_jepa.target_std},
               {"var_eps", t.style_jepa.var_eps}};
  j["augment"] = {{"max_shift", t.augment.max_shift},   {"flip", t.augment.flip},
                  {"brightness", t.augment.brightness}, {"contrast", t.augment.contrast},
                  {"saturation", t.augment.saturation}, {"channel_gain", t.augment.channel_gain}};
  json p = {{"aggregation", aggregate_mode_name(c.probe.aggregation)},
            {"fraction", c.probe.fraction},
            {"fused_dim", c.probe.fused_dim},
            {"fusion_holdout", c.probe.fusion_holdout},
            {"eval_limit", c.probe.eval_limit},
            {"epochs", c.probe.options.epochs},
            {"lr", c.probe.options.lr},
            {"weight_decay", c.probe.options.weight_decay}};
  if (c.probe.scale_weights) p["scale_weights"] = *c.probe.scale_weights;
  j["probe"] = p;
  j["output"] = {{"log_every", c.log_every}, {"checkpoint_every", c.checkpoint_every}};
  return j.dump(2);
}

Variant parse_variant(const std::string& name) {
  if (name == "full" || name == "baseline") return {name, {}};
  if (name == "no-fft") return {name, {"fft"}};
  if (name == "no-swd") return {name, {"swd"}};
  if (name == "no-fft-swd") return {name, {"fft", "swd"}};
  if (name == "no-jepa") return {name, {"jepa_sty"}};
  if (name.rfind("no-", 0) == 0) {
    std::string term = name.substr(3);
    for (auto& ch : term)
      if (ch == '-') ch = '_';
    LossWeights probe;
    probe.get(term);  // throws for unknown terms
    return {name, {term}};
  }
  throw std::invalid_argument("unknown ablation variant '" + name + "'");
}

RunConfig apply_variant(const RunConfig& base, const Variant& v) {
  RunConfig c = base;
  for (const auto& t : v.disabled_terms) c.train.weights.set(t, 0.0);
  return c;
}

}  // namespace stylesplit
