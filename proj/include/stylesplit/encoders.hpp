#pragma once

#include <array>
#include <cstddef>

#include "stylesplit/nn.hpp"

namespace stylesplit {

inline constexpr std::size_t kScales = 5;

struct ArchConfig {
  std::size_t image_size = 64;
  std::size_t base_channels = 16;
  std::size_t token_dim = 128;          // d_t
  std::size_t content_embed_dim = 128;  // MoCo embedding width
  std::size_t disc_channels = 32;
};

// C_i = base * 2^min(i,3) for scale index i = 0..4.
std::array<std::size_t, kScales> scale_channels(std::size_t base);
// Content pyramid extents: image_size / 2^i.
std::array<std::size_t, kScales> scale_extents(std::size_t image_size);

struct SkipPyramid {
  std::array<Tensor, kScales> s;
};

struct StyleBundle {
  std::array<Tensor, kScales> maps;    // m_1..m_5, [B,C_i,h,w]
  std::array<Tensor, kScales> tokens;  // t_1..t_5, [B,d_t]
  Tensor global;                       // t_G, [B,d_t]

  std::size_t batch() const { return global.size(0); }
};

struct TokenProjection {
  std::array<Linear, kScales> scale;  // W_i, b_i
  Linear global;                      // W_G, b_G
};

// Validates an NCHW image batch against the configured resolution.
void check_image(const Tensor& x, std::size_t image_size, const char* op);

// t_i = W_i * mean_{h,w}(m_i) + b_i
Tensor pool_and_project(const Tensor& map, const Linear& proj);
// t_G = W_G * GAP(m_5) + b_G
Tensor global_token(const Tensor& m5, const Linear& proj);

// U-Net contracting path plus the content heads (MoCo projection and the
// spatial-token projection used for masked prediction).
class ContentEncoder {
 public:
  ContentEncoder() = default;
  ContentEncoder(const ArchConfig& cfg, Rng& rng);

  SkipPyramid encode(const Tensor& x) const;
  // L2-normalized MoCo embedding from GAP(s5).
  Tensor embed(const SkipPyramid& p) const;
  // Frozen-probe feature: GAP(s5), [B,C_5].
  Tensor features(const SkipPyramid& p) const;
  // s5 positions projected to d_t: [B, h5*w5, d_t].
  Tensor spatial_tokens(const SkipPyramid& p) const;

  ParamList parameters() const;
  const ArchConfig& config() const { return cfg_; }

 private:
  ArchConfig cfg_;
  std::array<Conv2d, kScales> stages_;
  Linear embed_head_;
  Linear token_head_;
};

class StyleEncoder {
 public:
  StyleEncoder() = default;
  StyleEncoder(const ArchConfig& cfg, Rng& rng);

  StyleBundle encode(const Tensor& y) const;
  ParamList parameters() const;
  const ArchConfig& config() const { return cfg_; }
  const TokenProjection& projection() const { return proj_; }

 private:
  ArchConfig cfg_;
  std::array<Conv2d, kScales> stages_;
  TokenProjection proj_;
};

// Token sequence [B,6,d_t] ordered t_1..t_5, t_G.
Tensor style_token_sequence(const StyleBundle& bundle);

}  // namespace stylesplit
