#include "stylesplit/gradcheck.hpp"

#include <cmath>
#include <limits>
#include <map>

#include "stylesplit/jepa.hpp"
#include "stylesplit/objectives.hpp"
#include "stylesplit/ops.hpp"

namespace stylesplit {

double gradient_error(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double step,
                      double floor) {
  if (!(step > 0) || !(floor > 0)) throw std::invalid_argument("gradient_error: step and floor must be positive");
  Tensor x = point.clone();
  x.set_requires_grad(true);
  std::vector<double> analytic(x.numel(), 0.0);
  {
    Graph graph;
    Tensor loss = fn(x);
    graph.backprop(loss);
    if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());
  }
  double worst = 0.0;
  auto values = x.mutable_data();
  NoGradScope no_grad;
  for (std::size_t i = 0; i < values.size(); ++i) {
    double orig = values[i];
    values[i] = orig + step;
    double up = fn(x).item();
    values[i] = orig - step;
    double down = fn(x).item();
    values[i] = orig;
    double central = (up - down) / (2.0 * step);
    if (!std::isfinite(central) || !std::isfinite(analytic[i])) return std::numeric_limits<double>::infinity();
    double denom = std::max(std::fabs(central), floor);
    worst = std::max(worst, std::fabs(analytic[i] - central) / denom);
  }
  return worst;
}

namespace {

Tensor randn(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::size_t count = 1;
  for (auto d : shape) count *= d;
  std::vector<double> v(count);
  for (auto& x : v) x = n(rng);
  return Tensor(std::move(shape), std::move(v));
}

// Values in [-3,3] at least 0.2 away from the hinge corners at +-1.
Tensor hinge_scores(Shape shape, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t = randn(shape, rng);
  for (auto& x : t.mutable_data()) {
    double mag = 0.2 + 0.6 * u(rng);
    double base = u(rng) < 0.5 ? -1.0 : 1.0;
    x = base + (u(rng) < 0.5 ? -mag : mag) * (1.0 + std::fabs(x));
  }
  return t;
}

// ref + offsets whose magnitudes lie in [0.2, 1], so L1 terms stay smooth.
Tensor offset_from(const Tensor& ref, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(ref.data().begin(), ref.data().end());
  for (auto& x : v) x += (u(rng) < 0.5 ? -1.0 : 1.0) * (0.2 + 0.8 * u(rng));
  return Tensor(ref.shape(), std::move(v));
}

StyleBundle token_bundle(std::size_t batch, std::size_t dim, Rng& rng) {
  StyleBundle b;
  for (auto& t : b.tokens) t = randn({batch, dim}, rng);
  b.global = randn({batch, dim}, rng);
  return b;
}

StyleBundle shifted_bundle(const StyleBundle& ref, Rng& rng) {
  StyleBundle b;
  for (std::size_t i = 0; i < kScales; ++i) b.tokens[i] = offset_from(ref.tokens[i], rng);
  b.global = offset_from(ref.global, rng);
  return b;
}

Tensor random_directions(std::size_t dim, std::size_t count, Rng& rng) {
  Tensor d = randn({count, dim}, rng);
  return ops::transpose(ops::l2_normalize_rows(d)).clone();
}

}  // namespace

std::vector<GradCase> gradient_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> ext(2, 8);
  std::vector<GradCase> cases;
  auto add = [&](std::string name, Tensor point, std::function<Tensor(const Tensor&)> fn) {
    cases.push_back({std::move(name), std::move(point), std::move(fn)});
  };

  // adversarial terms
  {
    std::size_t h = ext(rng), w = ext(rng);
    Tensor real = hinge_scores({2, 1, h, w}, rng), fake = hinge_scores({2, 1, h, w}, rng);
    add("hinge_d/real", real, [fake](const Tensor& r) { return hinge_d(r, fake); });
    add("hinge_d/fake", fake, [real](const Tensor& f) { return hinge_d(real, f); });
    add("adv_g", randn({2, 1, h, w}, rng), [](const Tensor& f) { return adv_g(f); });
  }

  // style-token consistency
  {
    std::size_t d = ext(rng);
    StyleBundle ref = token_bundle(2, d, rng);
    StyleBundle fake = shifted_bundle(ref, rng);
    add("style_token_consistency/global", fake.global, [fake, ref](const Tensor& g) {
      StyleBundle f = fake;
      f.global = g;
      return style_token_consistency(f, ref);
    });
    add("style_token_consistency/t3", fake.tokens[2], [fake, ref](const Tensor& t) {
      StyleBundle f = fake;
      f.tokens[2] = t;
      return style_token_consistency(f, ref);
    });
  }

  // instance-level contrast
  {
    std::size_t b = ext(rng), d = ext(rng), k = ext(rng);
    Tensor q = ops::l2_normalize_rows(randn({b, d}, rng)).clone();
    Tensor key = ops::l2_normalize_rows(randn({b, d}, rng)).clone();
    Tensor queue = ops::l2_normalize_rows(randn({k, d}, rng)).clone();
    add("info_nce/q", q, [key, queue](const Tensor& x) { return info_nce(x, key, queue, 0.2); });
    add("info_nce/k", key, [q, queue](const Tensor& x) { return info_nce(q, x, queue, 0.2); });
    add("info_nce/queue", queue, [q, key](const Tensor& x) { return info_nce(q, key, x, 0.2); });
  }

  // patch contrast over two layers
  {
    std::size_t p = ext(rng), d1 = ext(rng), d2 = ext(rng);
    Tensor s1 = randn({2, p, d1}, rng, 0.5), s2 = randn({2, p, d2}, rng, 0.5);
    Tensor t1 = randn({2, p, d1}, rng, 0.5), t2 = randn({2, p, d2}, rng, 0.5);
    add("patch_nce/source", s1, [s2, t1, t2](const Tensor& x) { return patch_nce({x, s2}, {t1, t2}, 0.2); });
    add("patch_nce/stylized", t2, [s1, s2, t1](const Tensor& x) { return patch_nce({s1, s2}, {t1, x}, 0.2); });
  }

  // reconstruction and spectral terms
  {
    std::size_t h = ext(rng), w = ext(rng);
    Tensor target = randn({2, 3, h, w}, rng);
    add("reconstruction", offset_from(target, rng), [target](const Tensor& x) { return reconstruction_loss(x, target); });
    Tensor y = randn({1, 3, h, w}, rng);
    add("fft_amplitude", randn({1, 3, h, w}, rng), [y](const Tensor& x) { return fft_amplitude_loss(x, y); });
  }

  // sliced Wasserstein
  {
    std::size_t n = ext(rng), d = ext(rng), p = ext(rng);
    Tensor a = randn({n, d}, rng), b = randn({n, d}, rng);
    Tensor dirs = random_directions(d, p, rng);
    add("swd/a", a, [b, dirs](const Tensor& x) { return swd_loss_with_directions(x, b, dirs); });
    add("swd/b", b, [a, dirs](const Tensor& x) { return swd_loss_with_directions(a, x, dirs); });
    Tensor y = randn({1, 1, 16, 16}, rng);
    std::uint64_t proj_seed = rng();
    add("swd_texture", randn({1, 1, 16, 16}, rng), [y, proj_seed](const Tensor& x) {
      Rng r(proj_seed);  // same directions at every evaluation
      return swd_texture_loss(x, y, 4, r);
    });
    add("gram_matrix", randn({2, 3, ext(rng), ext(rng)}, rng),
        [](const Tensor& f) { return ops::sum(ops::square(gram_matrix(f))); });
  }

  // weighted sum
  {
    LossWeights w;
    w.fft = 0.5;
    Tensor adv = Tensor::scalar(0.7), rec = Tensor::scalar(-0.3);
    add("total_loss", Tensor({1}, {1.3}), [w, adv, rec](const Tensor& fft) {
      return total_loss({{"adv", adv}, {"rec", rec}, {"fft", ops::square(fft)}}, w);
    });
  }

  // masked prediction
  {
    std::size_t b = ext(rng), s = std::max<std::size_t>(3, ext(rng)), d = ext(rng);
    Rng init(rng());
    Predictor pred(s, d, ext(rng), init);
    MaskSet mask = sample_mask(s, b, 0.4, rng);
    Tensor student = randn({b, s, d}, rng, 0.3), teacher = randn({b, s, d}, rng);
    JepaOptions opt;
    add("jepa_objective/student", student, [pred, mask, teacher, opt](const Tensor& x) {
      return jepa_objective(x, teacher, pred, mask, opt).total;
    });
    add("jepa_objective/readout", pred.readout().bias.clone(), [pred, mask, student, teacher, opt](const Tensor& bias) {
      Predictor p = pred;
      p.readout().bias = bias;
      return jepa_objective(student, teacher, p, mask, opt).total;
    });
    Tensor predicted = randn({mask.count(), d}, rng);
    add("jepa_mse", predicted, [teacher, mask](const Tensor& x) { return jepa_mse(x, teacher, mask); });

    // Mixed active/inactive variance hinges, each dimension well away from the corner.
    std::size_t n = std::max<std::size_t>(4, ext(rng));
    Tensor tokens = randn({n, d}, rng);
    {
      auto v = tokens.mutable_data();
      for (std::size_t j = 0; j < d; ++j) {
        double scale = j % 2 ? 0.3 : 3.0;
        for (std::size_t i = 0; i < n; ++i) v[i * d + j] *= scale;
      }
    }
    add("variance_penalty", tokens, [](const Tensor& x) { return variance_penalty(x, 1.0); });
    add("covariance_penalty", tokens, [](const Tensor& x) { return covariance_penalty(x); });
    Tensor seq = randn({n, s, d}, rng, 0.3);
    add("sequence_variance_penalty", seq, [](const Tensor& x) { return sequence_variance_penalty(x, 1.0); });
    add("sequence_covariance_penalty", seq, [](const Tensor& x) { return sequence_covariance_penalty(x); });
    Tensor parts = randn({3}, rng);
    add("style_jepa_total", parts, [](const Tensor& x) {
      auto at = [&](std::size_t i) { return ops::slice(x, 0, i, i + 1); };
      return style_jepa_total(at(0), ops::square(at(1)), ops::square(at(2)), 25.0, 1.0);
    });
  }
  return cases;
}

std::vector<GradCheckRow> run_gradient_suite(const GradCheckOptions& opt) {
  std::vector<GradCheckRow> rows;
  std::map<std::string, std::size_t> slot;
  for (std::size_t s = 0; s < opt.seeds; ++s) {
    for (auto& c : gradient_cases(1000 + s)) {
      auto [it, fresh] = slot.emplace(c.name, rows.size());
      if (fresh) rows.push_back({c.name, 0, 0.0, true});
      auto& row = rows[it->second];
      double err = gradient_error(c.fn, c.point, opt.step, opt.floor);
      row.seeds += 1;
      row.worst_error = std::max(row.worst_error, err);
      row.passed = row.worst_error <= opt.tolerance;
    }
  }
  return rows;
}

}  // namespace stylesplit
