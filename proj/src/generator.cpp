#include "stylesplit/generator.hpp"

#include <stdexcept>
#include <string>

#include "stylesplit/ops.hpp"

namespace stylesplit {

namespace {

void zero_tensor(Tensor t) {
  for (auto& v : t.mutable_data()) v = 0.0;
}

Tensor as_channel_map(const Tensor& v) { return ops::reshape(v, {v.size(0), v.size(1), 1, 1}); }

}  // namespace

SpadeBlockParams::SpadeBlockParams(std::size_t map_channels, std::size_t out_channels, std::size_t token_dim,
                                   Rng& rng)
    : shared_m(map_channels, out_channels, 3, 1, 1, rng),
      gamma_m(out_channels, out_channels, 3, 1, 1, rng),
      beta_m(out_channels, out_channels, 3, 1, 1, rng),
      gamma_t(token_dim, out_channels, rng),
      beta_t(token_dim, out_channels, rng) {
  // Start near identity modulation so early decoding is driven by content.
  for (Tensor w : {gamma_m.weight, beta_m.weight, gamma_t.weight, beta_t.weight}) {
    for (auto& v : w.mutable_data()) v *= 0.1;
  }
}

void SpadeBlockParams::collect(ParamList& out, const std::string& prefix) const {
  shared_m.collect(out, prefix + ".shared_m");
  gamma_m.collect(out, prefix + ".gamma_m");
  beta_m.collect(out, prefix + ".beta_m");
  gamma_t.collect(out, prefix + ".gamma_t");
  beta_t.collect(out, prefix + ".beta_t");
}

void SpadeBlockParams::zero() {
  ParamList all;
  collect(all, "");
  for (auto& p : all) zero_tensor(p.tensor);
}

Tensor spade_modulate(const Tensor& h, const Tensor& m, const Tensor& t, const SpadeBlockParams& params) {
  if (h.dim() != 4 || m.dim() != 4 || h.size(0) != m.size(0)) {
    throw std::invalid_argument("spade_modulate: activations " + shape_str(h.shape()) + " vs map " +
                                shape_str(m.shape()));
  }
  if (m.size(1) != params.shared_m.weight.size(1) || h.size(1) != params.gamma_m.weight.size(0)) {
    throw std::invalid_argument("spade_modulate: channel mismatch, activations " + shape_str(h.shape()) +
                                ", map " + shape_str(m.shape()));
  }
  if (t.dim() != 2 || t.size(0) != h.size(0) || t.size(1) != params.gamma_t.weight.size(1)) {
    throw std::invalid_argument("spade_modulate: token " + shape_str(t.shape()) + " does not match block");
  }
  Tensor map = m;
  if (m.size(2) != h.size(2) || m.size(3) != h.size(3)) map = ops::resize_nearest(m, h.size(2), h.size(3));
  Tensor hidden = ops::leaky_relu(params.shared_m(map));
  Tensor gm = params.gamma_m(hidden);
  Tensor bm = params.beta_m(hidden);
  Tensor gt = as_channel_map(params.gamma_t(t));
  Tensor bt = as_channel_map(params.beta_t(t));
  Tensor alpha = ops::add_scalar(ops::add(gm, gt), 1.0);
  Tensor delta = ops::add(bm, bt);
  return ops::add(ops::mul(alpha, ops::instance_norm(h, kInstanceNormEps)), delta);
}

Generator::Generator(const ArchConfig& cfg, Rng& rng) : cfg_(cfg) {
  auto ch = scale_channels(cfg.base_channels);
  dec_[4] = Conv2d(ch[4], ch[4], 3, 1, 1, rng);
  for (std::size_t i = 0; i < 4; ++i) dec_[i] = Conv2d(ch[i + 1] + ch[i], ch[i], 3, 1, 1, rng);
  for (std::size_t i = 0; i < kScales; ++i) spade_[i] = SpadeBlockParams(ch[i], ch[i], cfg.token_dim, rng);
  out_ = Conv2d(ch[0], 3, 3, 1, 1, rng);
}

Tensor Generator::decode(const SkipPyramid& content, const StyleBundle& style) const {
  for (std::size_t i = 0; i < kScales; ++i) {
    if (!content.s[i].defined() || !style.maps[i].defined() || !style.tokens[i].defined()) {
      throw std::invalid_argument("decode: incomplete pyramid or bundle at scale " + std::to_string(i + 1));
    }
  }
  if (content.s[0].size(0) != style.batch()) {
    throw std::invalid_argument("decode: content batch " + std::to_string(content.s[0].size(0)) +
                                " vs style batch " + std::to_string(style.batch()));
  }
  Tensor h;
  for (std::size_t step = 0; step < kScales; ++step) {
    std::size_t i = kScales - 1 - step;
    if (i == kScales - 1) {
      h = dec_[i](content.s[i]);
    } else {
      h = dec_[i](ops::concat({ops::upsample_nearest(h, 2), content.s[i]}, 1));
    }
    Tensor token = ops::add(style.tokens[i], style.global);
    h = ops::leaky_relu(spade_modulate(h, style.maps[i], token, spade_[i]));
  }
  return ops::tanh(out_(h));
}

ParamList Generator::parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < kScales; ++i) dec_[i].collect(out, "gen.dec" + std::to_string(i + 1));
  for (std::size_t i = 0; i < kScales; ++i) spade_[i].collect(out, "gen.spade" + std::to_string(i + 1));
  out_.collect(out, "gen.out");
  return out;
}

Tensor stylize(const ContentEncoder& content, const Generator& gen, const Tensor& x, const StyleBundle& style) {
  return gen.decode(content.encode(x), style);
}

Tensor reconstruct_guided(const ContentEncoder& content, const Generator& gen, const Tensor& x_mix_stylized,
                          const StyleBundle& style_ref) {
  return gen.decode(content.encode(x_mix_stylized), style_ref);
}

Discriminator::Discriminator(const ArchConfig& cfg, Rng& rng) : cfg_(cfg) {
  std::size_t c = cfg.disc_channels;
  c1_ = Conv2d(3, c, 4, 2, 1, rng);
  c2_ = Conv2d(c, 2 * c, 4, 2, 1, rng);
  c3_ = Conv2d(2 * c, 1, 4, 2, 1, rng);
}

Tensor Discriminator::operator()(const Tensor& img) const {
  check_image(img, cfg_.image_size, "discriminate");
  Tensor h = ops::leaky_relu(c1_(img));
  h = ops::leaky_relu(c2_(h));
  return c3_(h);
}

ParamList Discriminator::parameters() const {
  ParamList out;
  c1_.collect(out, "disc.c1");
  c2_.collect(out, "disc.c2");
  c3_.collect(out, "disc.c3");
  return out;
}

}  // namespace stylesplit
