#include "stylesplit/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "stylesplit/ops.hpp"

namespace stylesplit {

namespace {

const char* const kTermNames[] = {"adv", "sty",   "jepa_sty",  "rec", "moco",
                                  "patch", "content_nce", "jepa_cnt", "fft", "swd"};

double* weight_slot(LossWeights& w, const std::string& term) {
  if (term == "adv") return &w.adv;
  if (term == "sty") return &w.sty;
  if (term == "jepa_sty") return &w.jepa_sty;
  if (term == "rec") return &w.rec;
  if (term == "moco") return &w.moco;
  if (term == "patch") return &w.patch;
  if (term == "content_nce") return &w.content_nce;
  if (term == "jepa_cnt") return &w.jepa_cnt;
  if (term == "fft") return &w.fft;
  if (term == "swd") return &w.swd;
  throw std::invalid_argument("LossWeights: unknown term '" + term + "'");
}

// Mean over rows of (logsumexp(row) - row[target_col(row)]), where the
// positive sits on the diagonal of a square logit matrix.
Tensor diagonal_ce(const Tensor& logits) {
  std::size_t p = logits.size(0);
  Tensor eye = Tensor::zeros({p, p});
  auto e = eye.mutable_data();
  for (std::size_t i = 0; i < p; ++i) e[i * p + i] = 1.0;
  Tensor pos = ops::sum_axis(ops::mul(logits, eye), 1);
  return ops::mean(ops::sub(ops::logsumexp(logits), pos));
}

Tensor as_3d(const Tensor& t) {
  if (t.dim() == 2) return ops::reshape(t, {1, t.size(0), t.size(1)});
  if (t.dim() == 3) return t;
  throw std::invalid_argument("patch_nce: expected [P,D] or [B,P,D], got " + shape_str(t.shape()));
}

}  // namespace

std::vector<std::pair<std::string, double>> LossWeights::named() const {
  auto self = *this;
  std::vector<std::pair<std::string, double>> out;
  for (const char* n : kTermNames) out.emplace_back(n, *weight_slot(self, n));
  return out;
}

double LossWeights::get(const std::string& term) const {
  auto self = *this;
  return *weight_slot(self, term);
}

void LossWeights::set(const std::string& term, double value) { *weight_slot(*this, term) = value; }

void LossWeights::validate() const {
  for (const auto& [name, value] : named()) {
    if (!(value >= 0.0) || !std::isfinite(value)) {
      throw std::invalid_argument("weights." + name + ": must be a finite value >= 0, got " + std::to_string(value));
    }
  }
}

Tensor hinge_d(const Tensor& real_scores, const Tensor& fake_scores) {
  Tensor real_term = ops::mean(ops::relu(ops::add_scalar(ops::neg(real_scores), 1.0)));
  Tensor fake_term = ops::mean(ops::relu(ops::add_scalar(fake_scores, 1.0)));
  return ops::add(real_term, fake_term);
}

Tensor adv_g(const Tensor& fake_scores) { return ops::neg(ops::mean(fake_scores)); }

Tensor style_token_consistency(const StyleBundle& fake, const StyleBundle& ref) {
  if (fake.batch() != ref.batch()) {
    throw std::invalid_argument("style_token_consistency: batch mismatch");
  }
  double inv_b = 1.0 / static_cast<double>(fake.batch());
  Tensor total = ops::mul_scalar(ops::l1_norm(ops::sub(fake.global, ref.global)), inv_b);
  for (std::size_t i = 0; i < kScales; ++i) {
    total = ops::add(total, ops::mul_scalar(ops::l1_norm(ops::sub(fake.tokens[i], ref.tokens[i])), inv_b));
  }
  return total;
}

Tensor info_nce(const Tensor& q, const Tensor& k, const Tensor& queue, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("info_nce: temperature must be > 0");
  if (q.dim() != 2 || q.shape() != k.shape()) {
    throw std::invalid_argument("info_nce: q " + shape_str(q.shape()) + " vs k " + shape_str(k.shape()));
  }
  std::size_t b = q.size(0);
  Tensor pos = ops::reshape(ops::sum_axis(ops::mul(q, k), 1), {b, 1});
  Tensor logits = pos;
  if (queue.defined()) {
    if (queue.dim() != 2 || queue.size(1) != q.size(1)) {
      throw std::invalid_argument("info_nce: queue " + shape_str(queue.shape()) + " vs q " + shape_str(q.shape()));
    }
    logits = ops::concat({pos, ops::matmul(q, ops::transpose(queue))}, 1);
  }
  logits = ops::mul_scalar(logits, 1.0 / tau);
  Tensor first = ops::reshape(ops::slice(logits, 1, 0, 1), {b});
  return ops::mean(ops::sub(ops::logsumexp(logits), first));
}

Tensor patch_nce(const std::vector<Tensor>& feats_src, const std::vector<Tensor>& feats_sty, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("patch_nce: temperature must be > 0");
  if (feats_src.empty() || feats_src.size() != feats_sty.size()) {
    throw std::invalid_argument("patch_nce: layer sets differ (" + std::to_string(feats_src.size()) + " vs " +
                                std::to_string(feats_sty.size()) + ")");
  }
  Tensor total;
  for (std::size_t l = 0; l < feats_src.size(); ++l) {
    Tensor src = as_3d(feats_src[l]), sty = as_3d(feats_sty[l]);
    if (src.shape() != sty.shape()) {
      throw std::invalid_argument("patch_nce: layer " + std::to_string(l) + " sampling differs: " +
                                  shape_str(src.shape()) + " vs " + shape_str(sty.shape()));
    }
    std::size_t b = src.size(0), p = src.size(1), d = src.size(2);
    Tensor layer;
    for (std::size_t i = 0; i < b; ++i) {
      Tensor qs = ops::reshape(ops::slice(src, 0, i, i + 1), {p, d});
      Tensor ks = ops::reshape(ops::slice(sty, 0, i, i + 1), {p, d});
      Tensor ce = diagonal_ce(ops::mul_scalar(ops::matmul(qs, ops::transpose(ks)), 1.0 / tau));
      layer = layer.defined() ? ops::add(layer, ce) : ce;
    }
    layer = ops::mul_scalar(layer, 1.0 / static_cast<double>(b));
    total = total.defined() ? ops::add(total, layer) : layer;
  }
  return total;
}

Tensor reconstruction_loss(const Tensor& x_hat, const Tensor& x) {
  if (x_hat.shape() != x.shape()) {
    throw std::invalid_argument("reconstruction_loss: " + shape_str(x_hat.shape()) + " vs " + shape_str(x.shape()));
  }
  return ops::mean(ops::abs(ops::sub(x_hat, x)));
}

Tensor fft_amplitude_loss(const Tensor& x_tilde, const Tensor& y, double eps) {
  if (!(eps > 0)) throw std::invalid_argument("fft_amplitude_loss: eps must be > 0");
  if (x_tilde.shape() != y.shape()) {
    throw std::invalid_argument("fft_amplitude_loss: " + shape_str(x_tilde.shape()) + " vs " + shape_str(y.shape()));
  }
  Tensor ax = ops::log(ops::add_scalar(ops::dft2_magnitude(x_tilde), eps));
  Tensor ay = ops::log(ops::add_scalar(ops::dft2_magnitude(y), eps));
  return ops::mean(ops::abs(ops::sub(ax, ay)));
}

Tensor swd_loss_with_directions(const Tensor& patches_a, const Tensor& patches_b, const Tensor& directions) {
  if (!patches_a.defined() || !patches_b.defined() || !directions.defined()) {
    throw std::invalid_argument("swd_loss: empty patch set or directions");
  }
  if (patches_a.dim() != 2 || patches_a.shape() != patches_b.shape()) {
    throw std::invalid_argument("swd_loss: patch sets " + shape_str(patches_a.shape()) + " vs " +
                                shape_str(patches_b.shape()));
  }
  if (directions.dim() != 2 || directions.size(0) != patches_a.size(1)) {
    throw std::invalid_argument("swd_loss: directions " + shape_str(directions.shape()) + " vs patches " +
                                shape_str(patches_a.shape()));
  }
  Tensor pa = ops::sort_last(ops::transpose(ops::matmul(patches_a, directions)));
  Tensor pb = ops::sort_last(ops::transpose(ops::matmul(patches_b, directions)));
  return ops::mean(ops::abs(ops::sub(pa, pb)));
}

Tensor swd_loss(const Tensor& patches_a, const Tensor& patches_b, std::size_t n_proj, Rng& rng) {
  if (!patches_a.defined() || !patches_b.defined()) throw std::invalid_argument("swd_loss: empty patch set");
  if (n_proj == 0) throw std::invalid_argument("swd_loss: n_proj must be >= 1");
  if (patches_a.dim() != 2 || patches_b.dim() != 2 || patches_a.size(1) != patches_b.size(1)) {
    throw std::invalid_argument("swd_loss: patch sets " + shape_str(patches_a.shape()) + " vs " +
                                shape_str(patches_b.shape()));
  }
  std::size_t d = patches_a.size(1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> dirs(d * n_proj);
  for (std::size_t p = 0; p < n_proj; ++p) {
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double v = normal(rng);
      dirs[i * n_proj + p] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < d; ++i) dirs[i * n_proj + p] /= norm;
  }
  Tensor a = patches_a, b = patches_b;
  std::size_t n = std::min(a.size(0), b.size(0));
  auto subsample = [&](const Tensor& t) {
    if (t.size(0) == n) return t;
    std::vector<std::size_t> idx(t.size(0));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return ops::index_select(t, 0, idx);
  };
  a = subsample(a);
  b = subsample(b);
  return swd_loss_with_directions(a, b, Tensor({d, n_proj}, std::move(dirs)));
}

std::vector<Tensor> laplacian_pyramid(const Tensor& img, std::size_t levels) {
  if (img.dim() != 4 || levels == 0) throw std::invalid_argument("laplacian_pyramid: expected NCHW, levels >= 1");
  std::vector<Tensor> out;
  Tensor cur = img;
  for (std::size_t l = 0; l + 1 < levels; ++l) {
    if (cur.size(2) % 2 || cur.size(3) % 2) {
      throw std::invalid_argument("laplacian_pyramid: odd extent " + shape_str(cur.shape()));
    }
    Tensor down = ops::adaptive_avg_pool(cur, cur.size(2) / 2, cur.size(3) / 2);
    out.push_back(ops::sub(cur, ops::upsample_nearest(down, 2)));
    cur = down;
  }
  out.push_back(cur);
  return out;
}

Tensor extract_patches(const Tensor& img, std::size_t k) {
  if (img.dim() != 4 || k == 0 || img.size(2) % k || img.size(3) % k) {
    throw std::invalid_argument("extract_patches: " + shape_str(img.shape()) + " not divisible by " + std::to_string(k));
  }
  std::size_t b = img.size(0), c = img.size(1), gh = img.size(2) / k, gw = img.size(3) / k;
  Tensor t = ops::reshape(img, {b, c, gh, k, gw, k});
  t = ops::permute(t, {0, 2, 4, 1, 3, 5});
  return ops::reshape(t, {b * gh * gw, c * k * k});
}

Tensor swd_texture_loss(const Tensor& x_tilde, const Tensor& y, std::size_t n_proj, Rng& rng) {
  auto px = laplacian_pyramid(x_tilde, 3);
  auto py = laplacian_pyramid(y, 3);
  Tensor total;
  for (std::size_t l = 0; l < px.size(); ++l) {
    Tensor term = swd_loss(extract_patches(px[l], 4), extract_patches(py[l], 4), n_proj, rng);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return ops::mul_scalar(total, 1.0 / static_cast<double>(px.size()));
}

Tensor gram_matrix(const Tensor& features) {
  if (features.dim() == 3) {
    std::size_t c = features.size(0), s = features.size(1) * features.size(2);
    Tensor x = ops::reshape(features, {c, s});
    return ops::mul_scalar(ops::matmul(x, ops::transpose(x)), 1.0 / static_cast<double>(s));
  }
  if (features.dim() == 4) {
    std::vector<Tensor> grams;
    for (std::size_t i = 0; i < features.size(0); ++i) {
      Tensor f = ops::reshape(ops::slice(features, 0, i, i + 1),
                              {features.size(1), features.size(2), features.size(3)});
      Tensor g = gram_matrix(f);
      grams.push_back(ops::reshape(g, {1, g.size(0), g.size(1)}));
    }
    return grams.size() == 1 ? grams[0] : ops::concat(grams, 0);
  }
  throw std::invalid_argument("gram_matrix: expected [C,H,W] or [N,C,H,W], got " + shape_str(features.shape()));
}

Tensor total_loss(const std::map<std::string, Tensor>& parts, const LossWeights& w) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& [name, weight] : w.named()) {
    if (weight == 0.0) continue;
    auto it = parts.find(name);
    if (it == parts.end() || !it->second.defined()) continue;
    total = ops::add(total, ops::mul_scalar(it->second, weight));
  }
  return total;
}

}  // namespace stylesplit
