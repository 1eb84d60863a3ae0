#pragma once

#include <array>

#include "stylesplit/encoders.hpp"

namespace stylesplit {

// gamma_m/beta_m: conv3x3 -> leaky -> conv3x3 from the appearance map, the
// first convolution shared by both; gamma_t/beta_t: linear maps from the
// style token.
struct SpadeBlockParams {
  Conv2d shared_m, gamma_m, beta_m;
  Linear gamma_t, beta_t;

  SpadeBlockParams() = default;
  SpadeBlockParams(std::size_t map_channels, std::size_t out_channels, std::size_t token_dim, Rng& rng);
  void collect(ParamList& out, const std::string& prefix) const;
  // Sets every weight and bias to zero (identity modulation).
  void zero();
};

inline constexpr double kInstanceNormEps = 1e-5;

// alpha * IN(h) + delta with alpha = 1 + gamma_m(m) + gamma_t(t),
// delta = beta_m(m) + beta_t(t). m is nearest-resized to h's extent.
Tensor spade_modulate(const Tensor& h, const Tensor& m, const Tensor& t, const SpadeBlockParams& params);

// SPADE-modulated U-Net decoder. R (guided reconstruction) shares these
// weights; it differs from stylization only in which bundle it consumes.
class Generator {
 public:
  Generator() = default;
  Generator(const ArchConfig& cfg, Rng& rng);

  Tensor decode(const SkipPyramid& content, const StyleBundle& style) const;
  ParamList parameters() const;
  std::array<SpadeBlockParams, kScales>& spade_blocks() { return spade_; }

 private:
  ArchConfig cfg_;
  std::array<Conv2d, kScales> dec_;
  std::array<SpadeBlockParams, kScales> spade_;
  Conv2d out_;
};

// x~ = G(x; Style(y))
Tensor stylize(const ContentEncoder& content, const Generator& gen, const Tensor& x, const StyleBundle& style);
// x^ = R(x~_mix; Style(x_mix)), with R sharing G's weights.
Tensor reconstruct_guided(const ContentEncoder& content, const Generator& gen, const Tensor& x_mix_stylized,
                          const StyleBundle& style_ref);

// Three stride-2 4x4 convolutions; raw patch scores [B,1,H/8,W/8].
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(const ArchConfig& cfg, Rng& rng);

  Tensor operator()(const Tensor& img) const;
  ParamList parameters() const;

 private:
  ArchConfig cfg_;
  Conv2d c1_, c2_, c3_;
};

}  // namespace stylesplit
