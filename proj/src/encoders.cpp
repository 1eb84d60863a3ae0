#include "stylesplit/encoders.hpp"

#include <stdexcept>
#include <string>

#include "stylesplit/ops.hpp"

namespace stylesplit {

std::array<std::size_t, kScales> scale_channels(std::size_t base) {
  std::array<std::size_t, kScales> c{};
  for (std::size_t i = 0; i < kScales; ++i) c[i] = base << std::min<std::size_t>(i, 3);
  return c;
}

std::array<std::size_t, kScales> scale_extents(std::size_t image_size) {
  std::array<std::size_t, kScales> e{};
  for (std::size_t i = 0; i < kScales; ++i) e[i] = image_size >> i;
  return e;
}

void check_image(const Tensor& x, std::size_t image_size, const char* op) {
  if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != image_size || x.size(3) != image_size) {
    throw std::invalid_argument(std::string(op) + ": expected [B,3," + std::to_string(image_size) + "," +
                                std::to_string(image_size) + "], got " + shape_str(x.shape()));
  }
}

Tensor pool_and_project(const Tensor& map, const Linear& proj) {
  if (map.dim() != 4 || map.size(1) != proj.weight.size(1)) {
    throw std::invalid_argument("pool_and_project: map " + shape_str(map.shape()) + " vs projection " +
                                shape_str(proj.weight.shape()));
  }
  return proj(ops::global_avg_pool(map));
}

Tensor global_token(const Tensor& m5, const Linear& proj) {
  if (m5.dim() != 4 || m5.size(1) != proj.weight.size(1)) {
    throw std::invalid_argument("global_token: map " + shape_str(m5.shape()) + " vs projection " +
                                shape_str(proj.weight.shape()));
  }
  return proj(ops::global_avg_pool(m5));
}

ContentEncoder::ContentEncoder(const ArchConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.image_size % 16 != 0 || cfg.image_size < 32) {
    throw std::invalid_argument("ContentEncoder: image_size must be a multiple of 16, >= 32");
  }
  auto ch = scale_channels(cfg.base_channels);
  stages_[0] = Conv2d(3, ch[0], 3, 1, 1, rng);
  for (std::size_t i = 1; i < kScales; ++i) stages_[i] = Conv2d(ch[i - 1], ch[i], 3, 2, 1, rng);
  embed_head_ = Linear(ch[4], cfg.content_embed_dim, rng);
  token_head_ = Linear(ch[4], cfg.token_dim, rng);
}

SkipPyramid ContentEncoder::encode(const Tensor& x) const {
  check_image(x, cfg_.image_size, "encode_content");
  SkipPyramid p;
  Tensor h = x;
  for (std::size_t i = 0; i < kScales; ++i) {
    h = ops::leaky_relu(ops::instance_norm(stages_[i](h)));
    p.s[i] = h;
  }
  return p;
}

Tensor ContentEncoder::features(const SkipPyramid& p) const { return ops::global_avg_pool(p.s[4]); }

Tensor ContentEncoder::embed(const SkipPyramid& p) const {
  return ops::l2_normalize_rows(embed_head_(features(p)));
}

Tensor ContentEncoder::spatial_tokens(const SkipPyramid& p) const {
  const Tensor& s5 = p.s[4];
  std::size_t b = s5.size(0), c = s5.size(1), hw = s5.size(2) * s5.size(3);
  Tensor rows = ops::reshape(ops::permute(ops::reshape(s5, {b, c, hw}), {0, 2, 1}), {b * hw, c});
  return ops::reshape(token_head_(rows), {b, hw, cfg_.token_dim});
}

ParamList ContentEncoder::parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < kScales; ++i) stages_[i].collect(out, "content.stage" + std::to_string(i + 1));
  embed_head_.collect(out, "content.embed_head");
  token_head_.collect(out, "content.token_head");
  return out;
}

StyleEncoder::StyleEncoder(const ArchConfig& cfg, Rng& rng) : cfg_(cfg) {
  auto ch = scale_channels(cfg.base_channels);
  stages_[0] = Conv2d(3, ch[0], 3, 2, 1, rng);
  for (std::size_t i = 1; i < kScales; ++i) stages_[i] = Conv2d(ch[i - 1], ch[i], 3, 2, 1, rng);
  for (std::size_t i = 0; i < kScales; ++i) proj_.scale[i] = Linear(ch[i], cfg.token_dim, rng);
  proj_.global = Linear(ch[4], cfg.token_dim, rng);
}

StyleBundle StyleEncoder::encode(const Tensor& y) const {
  check_image(y, cfg_.image_size, "encode_style");
  StyleBundle b;
  Tensor h = y;
  for (std::size_t i = 0; i < kScales; ++i) {
    h = ops::leaky_relu(stages_[i](h));
    b.maps[i] = h;
    b.tokens[i] = pool_and_project(h, proj_.scale[i]);
  }
  b.global = global_token(b.maps[4], proj_.global);
  return b;
}

ParamList StyleEncoder::parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < kScales; ++i) stages_[i].collect(out, "style.stage" + std::to_string(i + 1));
  for (std::size_t i = 0; i < kScales; ++i) proj_.scale[i].collect(out, "style.proj" + std::to_string(i + 1));
  proj_.global.collect(out, "style.proj_global");
  return out;
}

Tensor style_token_sequence(const StyleBundle& bundle) {
  std::size_t b = bundle.batch(), d = bundle.global.size(1);
  std::vector<Tensor> parts;
  for (const auto& t : bundle.tokens) parts.push_back(ops::reshape(t, {b, 1, d}));
  parts.push_back(ops::reshape(bundle.global, {b, 1, d}));
  return ops::concat(parts, 1);
}

}  // namespace stylesplit
