#pragma once

#include <map>
#include <string>
#include <vector>

#include "stylesplit/encoders.hpp"

namespace stylesplit {

// Coefficients of the pretraining objective. A weight of exactly zero
// disables its term and the term's sub-graph is never built.
struct LossWeights {
  double adv = 1.0;
  double sty = 1.0;
  double jepa_sty = 1.0;
  double rec = 10.0;
  double moco = 1.0;
  double patch = 1.0;
  double content_nce = 1.0;
  double jepa_cnt = 1.0;
  double fft = 0.0;
  double swd = 0.0;

  // Term names in a fixed order, paired with their weights.
  std::vector<std::pair<std::string, double>> named() const;
  double get(const std::string& term) const;
  void set(const std::string& term, double value);
  // Throws std::invalid_argument naming the first negative weight.
  void validate() const;
};

// Hinge discriminator loss: mean max(0,1-D(y)) + mean max(0,1+D(x~)).
Tensor hinge_d(const Tensor& real_scores, const Tensor& fake_scores);
// Generator adversarial term: -mean D(x~).
Tensor adv_g(const Tensor& fake_scores);
// Per-sample sum of L1 token distances over t_G and t_1..t_5, batch mean.
Tensor style_token_consistency(const StyleBundle& fake, const StyleBundle& ref);
// Batch mean of -log softmax over [<q,k>, <q,k_i>...]/tau.
// q,k: [B,D]; queue: [K,D] or undefined for no negatives.
Tensor info_nce(const Tensor& q, const Tensor& k, const Tensor& queue, double tau);
// Per layer: [P,D] or [B,P,D] sampled position vectors. Positives are the
// same position in the stylized features; negatives are the other sampled
// positions of the same image.
Tensor patch_nce(const std::vector<Tensor>& feats_src, const std::vector<Tensor>& feats_sty, double tau);
// Mean absolute error.
Tensor reconstruction_loss(const Tensor& x_hat, const Tensor& x);
// mean |log(|F(x~)|+eps) - log(|F(y)|+eps)| over bins, channels, batch.
Tensor fft_amplitude_loss(const Tensor& x_tilde, const Tensor& y, double eps = 1e-6);
// Sliced 1-D Wasserstein-1 between two equally sized point sets [N,D].
// Unequal counts are equalized by subsampling the larger set.
Tensor swd_loss(const Tensor& patches_a, const Tensor& patches_b, std::size_t n_proj, Rng& rng);
// Same, with explicit unit directions [D,P].
Tensor swd_loss_with_directions(const Tensor& patches_a, const Tensor& patches_b, const Tensor& directions);
// Laplacian pyramid (avg-pool down, nearest up) of an image batch.
std::vector<Tensor> laplacian_pyramid(const Tensor& img, std::size_t levels);
// Non-overlapping k x k patches flattened to rows [N, C*k*k].
Tensor extract_patches(const Tensor& img, std::size_t k);
// SWD over 4x4 patches from 3 Laplacian levels, averaged over levels.
Tensor swd_texture_loss(const Tensor& x_tilde, const Tensor& y, std::size_t n_proj, Rng& rng);
// (1/S) X X^T for F [C,H,W] or the first sample of [N,C,H,W].
Tensor gram_matrix(const Tensor& features);
// Sum of w_term * L_term over enabled terms; absent or disabled terms add 0.
Tensor total_loss(const std::map<std::string, Tensor>& parts, const LossWeights& w);

}  // namespace stylesplit
