#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "stylesplit/checkpoint.hpp"
#include "stylesplit/config.hpp"
#include "stylesplit/experiment.hpp"
#include "stylesplit/fusion_probe.hpp"
#include "stylesplit/gradcheck.hpp"
#include "stylesplit/jepa.hpp"
#include "stylesplit/objectives.hpp"
#include "stylesplit/ops.hpp"

namespace py = pybind11;
using namespace stylesplit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

double scalar(const Tensor& t) {
  NoGradScope ng;
  return t.item();
}

py::dict metrics_dict(const ClassMetrics& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["macro_f1"] = m.macro_f1;
  d["f1"] = m.f1;
  return d;
}

RunConfig config_from(const std::string& json_text) {
  RunConfig c = parse_run_config(json_text);
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dual-branch style/content representation learning on a synthetic dataset";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  // ---- configuration and data ----
  m.def("parse_config", [](const std::string& text) { return run_config_to_json(config_from(text)); },
        py::arg("text"), "Validate a JSONC run configuration and return it with every default filled in.");
  m.def("load_config", [](const std::string& path) { return run_config_to_json(load_run_config(path)); },
        py::arg("path"));
  m.def(
      "generate_dataset",
      [](const std::string& config, std::optional<std::size_t> n) {
        RunConfig c = config_from(config);
        std::vector<SyntheticSample> data;
        {
          py::gil_scoped_release release;
          data = generate_dataset(n.value_or(c.samples), c.data, c.seed);
        }
        std::vector<std::size_t> all(data.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return py::make_tuple(to_array(batch_images(data, all)), content_labels(data, all), style_labels(data, all));
      },
      py::arg("config"), py::arg("n") = py::none(),
      "Render the seeded synthetic dataset: (images [N,3,S,S] in [-1,1], content labels, style labels).");

  // ---- losses ----
  m.def("info_nce", [](const Array& q, const Array& k, std::optional<Array> queue, double tau) {
    return scalar(info_nce(to_tensor(q), to_tensor(k), queue ? to_tensor(*queue) : Tensor(), tau));
  }, py::arg("q"), py::arg("k"), py::arg("queue") = py::none(), py::arg("tau") = 0.2);
  m.def("hinge_d", [](const Array& real, const Array& fake) { return scalar(hinge_d(to_tensor(real), to_tensor(fake))); },
        py::arg("real_scores"), py::arg("fake_scores"));
  m.def("fft_amplitude_loss", [](const Array& x, const Array& y, double eps) {
    return scalar(fft_amplitude_loss(to_tensor(x), to_tensor(y), eps));
  }, py::arg("x"), py::arg("y"), py::arg("eps") = 1e-6);
  m.def("swd_loss", [](const Array& a, const Array& b, const Array& directions) {
    return scalar(swd_loss_with_directions(to_tensor(a), to_tensor(b), to_tensor(directions)));
  }, py::arg("a"), py::arg("b"), py::arg("directions"), "Sliced W1 between point sets [N,D] along unit directions [D,P].");
  m.def("variance_penalty", [](const Array& tokens, double target_std) {
    return scalar(variance_penalty(to_tensor(tokens), target_std));
  }, py::arg("tokens"), py::arg("target_std") = 1.0);
  m.def("covariance_penalty", [](const Array& tokens) { return scalar(covariance_penalty(to_tensor(tokens))); },
        py::arg("tokens"));
  m.def("instance_norm", [](const Array& x) {
    NoGradScope ng;
    return to_array(ops::instance_norm(to_tensor(x)));
  }, py::arg("x"));
  m.def("sample_mask", [](std::size_t seq_len, std::size_t batch, double ratio, std::uint64_t seed) {
    Rng rng(seed);
    return sample_mask(seq_len, batch, ratio, rng).positions;
  }, py::arg("seq_len"), py::arg("batch"), py::arg("ratio"), py::arg("seed") = 0);

  // ---- fusion and metrics ----
  m.def(
      "fuse",
      [](const Array& f_sty, const Array& f_sem, std::size_t fused_dim, std::uint64_t seed,
         std::optional<double> gate_bias) {
        Tensor s = to_tensor(f_sty), c = to_tensor(f_sem);
        if (s.dim() != 2 || c.dim() != 2) throw std::invalid_argument("fuse: expected [B,D] embeddings");
        Rng rng(seed);
        GateParams p(s.size(1), c.size(1), fused_dim, rng);
        if (gate_bias) {
          for (auto& w : p.gate.weight.mutable_data()) w = 0.0;
          for (auto& b : p.gate.bias.mutable_data()) b = *gate_bias;
        }
        NoGradScope ng;
        FusionParts parts = fuse_parts(s, c, p);
        py::dict d;
        d["z_sty"] = to_array(parts.z_sty);
        d["z_sem"] = to_array(parts.z_sem);
        d["gate"] = to_array(parts.gate);
        d["z_fus"] = to_array(parts.z_fus);
        d["fused"] = to_array(parts.fused);
        return d;
      },
      py::arg("f_sty"), py::arg("f_sem"), py::arg("fused_dim") = 128, py::arg("seed") = 0,
      py::arg("gate_bias") = py::none(),
      "Gated fusion with freshly initialized parameters; gate_bias fixes W_g = 0 and b_g to the given value.");
  m.def("classification_metrics", [](const std::vector<int>& predicted, const std::vector<int>& labels,
                                     std::size_t classes) {
    return metrics_dict(classification_metrics(predicted, labels, classes));
  }, py::arg("predicted"), py::arg("labels"), py::arg("classes"));
  m.def(
      "linear_probe",
      [](const Array& train, const std::vector<int>& train_labels, const Array& eval, const std::vector<int>& eval_labels,
         std::size_t classes, std::size_t epochs, double lr, std::uint64_t seed) {
        ProbeOptions o;
        o.epochs = epochs;
        o.lr = lr;
        o.seed = seed;
        Tensor x = to_tensor(train), e = to_tensor(eval);
        ClassMetrics m;
        {
          py::gil_scoped_release release;
          m = probe_eval(probe_train(x, train_labels, classes, o), e, eval_labels);
        }
        return metrics_dict(m);
      },
      py::arg("train"), py::arg("train_labels"), py::arg("eval"), py::arg("eval_labels"), py::arg("classes"),
      py::arg("epochs") = 300, py::arg("lr") = 1e-2, py::arg("seed") = 0);

  // ---- runs ----
  m.def(
      "pretrain",
      [](const std::string& config, std::optional<std::size_t> steps, const std::string& checkpoint_dir) {
        RunConfig c = config_from(config);
        if (steps) c.steps = *steps;
        std::vector<double> totals;
        {
          py::gil_scoped_release release;
          auto data = generate_dataset(c.samples, c.data, c.seed);
          Pretrainer trainer(c, data);
          PretrainHooks hooks;
          hooks.on_step = [&](const StepLog& s) { totals.push_back(s.parts.at("total")); };
          pretrain(trainer, c.steps, hooks);
          if (!checkpoint_dir.empty()) save_checkpoint(checkpoint_dir, c, trainer.state());
        }
        return totals;
      },
      py::arg("config"), py::arg("steps") = py::none(), py::arg("checkpoint_dir") = "",
      "Pretrain from a configuration; returns the per-step total loss and optionally saves a checkpoint.");
  m.def(
      "probe",
      [](const std::string& checkpoint_dir, const std::string& branch, const std::string& target, double fraction) {
        ProbeOutcome o;
        {
          py::gil_scoped_release release;
          LoadedCheckpoint ck = load_checkpoint(checkpoint_dir);
          ProbeConfig pc = ck.config.probe;
          pc.fraction = fraction;
          pc.options.seed = ck.config.seed;
          auto data = generate_dataset(ck.config.samples, ck.config.data, ck.config.seed);
          ProbeSplit split = labeled_split(data.size(), fraction, split_seed(ck.config.seed), pc.eval_limit);
          Embeddings tr = extract_embeddings(ck.state, data, split.train, pc);
          Embeddings ev = extract_embeddings(ck.state, data, split.eval, pc);
          o = run_probe(parse_branch(branch), parse_target(target), tr, ev, pc, ck.config.data);
        }
        py::dict d = metrics_dict(o.metrics);
        d["n_train"] = o.n_train;
        d["n_eval"] = o.n_eval;
        d["classes"] = o.class_names;
        if (!o.gate_regime.empty()) d["gate_regime"] = o.gate_regime;
        return d;
      },
      py::arg("checkpoint_dir"), py::arg("branch") = "style", py::arg("target") = "style", py::arg("fraction") = 0.1);
  m.def(
      "gradient_suite",
      [](std::size_t seeds) {
        GradCheckOptions o;
        o.seeds = seeds;
        std::vector<GradCheckRow> rows;
        {
          py::gil_scoped_release release;
          rows = run_gradient_suite(o);
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["name"] = r.name;
          d["worst_error"] = r.worst_error;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("seeds") = 20);
  m.def(
      "collapse_toy",
      [](bool penalties, std::size_t steps, std::uint64_t seed) {
        CollapseToyOptions o;
        o.penalties = penalties;
        o.steps = steps;
        o.seed = seed;
        py::gil_scoped_release release;
        return run_collapse_toy(o).mean_std;
      },
      py::arg("penalties") = true, py::arg("steps") = 500, py::arg("seed") = 0,
      "Mean token std per step of the synthetic masked-token task.");
}
