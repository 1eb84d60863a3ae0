#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "helpers.hpp"
#include "stylesplit/encoders.hpp"
#include "stylesplit/ops.hpp"

using namespace stylesplit;
using testing::randn;

namespace {

ArchConfig small_arch(std::size_t size = 32) {
  ArchConfig a;
  a.image_size = size;
  a.base_channels = 4;
  a.token_dim = 16;
  a.content_embed_dim = 12;
  a.disc_channels = 8;
  return a;
}

Linear make_linear(Shape w_shape, std::vector<double> w, std::vector<double> b) {
  Linear l;
  std::size_t out = w_shape[0];
  l.weight = Tensor(std::move(w_shape), std::move(w));
  l.bias = Tensor({out}, std::move(b));
  return l;
}

// Mean over positions, then W u + b with explicit loops.
std::vector<double> naive_pool_project(const Tensor& m, const Linear& p) {
  std::size_t n = m.size(0), c = m.size(1), hw = m.size(2) * m.size(3), d = p.weight.size(0);
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < d; ++o) {
      double acc = p.bias.at(o);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double u = 0.0;
        for (std::size_t k = 0; k < hw; ++k) u += m.at((i * c + ch) * hw + k);
        acc += p.weight.at(o * c + ch) * (u / static_cast<double>(hw));
      }
      out[i * d + o] = acc;
    }
  return out;
}

void perturb(const ParamList& params, double delta) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (auto& v : t.mutable_data()) v += delta;
  }
}

}  // namespace

TEST_SUITE("encoders") {
  TEST_CASE("content pyramid extents at 64 px with base 16") {
    Rng rng(1);
    ArchConfig a;
    ContentEncoder enc(a, rng);
    auto p = enc.encode(testing::uniform({1, 3, 64, 64}, rng, -1.0, 1.0));
    const std::size_t ch[5] = {16, 32, 64, 128, 128}, ext[5] = {64, 32, 16, 8, 4};
    for (std::size_t i = 0; i < kScales; ++i) {
      CHECK(p.s[i].shape() == Shape{1, ch[i], ext[i], ext[i]});
      if (i > 0) CHECK(p.s[i].size(2) < p.s[i - 1].size(2));
    }
  }

  TEST_CASE("zero image with zero biases gives zero maps") {
    Rng rng(2);
    ContentEncoder enc(small_arch(), rng);
    for (const auto& p : enc.parameters())
      if (p.name.ends_with(".bias")) {
        Tensor t = p.tensor;
        std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
      }
    auto p = enc.encode(Tensor::zeros({2, 3, 32, 32}));
    for (const auto& s : p.s)
      for (double v : s.data()) CHECK(v == 0.0);
  }

  TEST_CASE("encoders are deterministic") {
    Rng rng(3);
    ContentEncoder ce(small_arch(), rng);
    StyleEncoder se(small_arch(), rng);
    auto x = testing::uniform({2, 3, 32, 32}, rng, -1.0, 1.0);
    auto a = ce.encode(x), b = ce.encode(x);
    for (std::size_t i = 0; i < kScales; ++i) CHECK(testing::bit_equal(a.s[i], b.s[i]));
    auto s1 = se.encode(x), s2 = se.encode(x);
    CHECK(testing::bit_equal(s1.global, s2.global));
    for (std::size_t i = 0; i < kScales; ++i) {
      CHECK(testing::bit_equal(s1.maps[i], s2.maps[i]));
      CHECK(testing::bit_equal(s1.tokens[i], s2.tokens[i]));
    }
  }

  TEST_CASE("wrong resolution is rejected") {
    Rng rng(4);
    ContentEncoder ce(small_arch(), rng);
    StyleEncoder se(small_arch(), rng);
    CHECK_THROWS_AS(ce.encode(Tensor::zeros({1, 3, 64, 64})), std::invalid_argument);
    CHECK_THROWS_AS(se.encode(Tensor::zeros({1, 1, 32, 32})), std::invalid_argument);
  }

  TEST_CASE("style bundle has six tokens of the token width") {
    Rng rng(5);
    StyleEncoder se(small_arch(), rng);
    auto b = se.encode(testing::uniform({3, 3, 32, 32}, rng, -1.0, 1.0));
    for (const auto& t : b.tokens) CHECK(t.shape() == Shape{3, 16});
    CHECK(b.global.shape() == Shape{3, 16});
    CHECK(style_token_sequence(b).shape() == Shape{3, 6, 16});
    auto ch = scale_channels(4);
    for (std::size_t i = 0; i < kScales; ++i) CHECK(b.maps[i].size(1) == ch[i]);
  }

  TEST_CASE("brightness shift changes the global token") {
    Rng rng(6);
    StyleEncoder se(small_arch(), rng);
    auto y = testing::uniform({1, 3, 32, 32}, rng, -0.8, 0.6);
    auto y2 = ops::add_scalar(y, 0.2);
    CHECK(testing::max_abs_diff(se.encode(y).global, se.encode(y2).global) > 1e-6);
  }

  TEST_CASE("pooling a 2x2 map") {
    Tensor m({1, 1, 2, 2}, {1, 3, 2, 6});
    auto t = pool_and_project(m, make_linear({1, 1}, {1.0}, {0.0}));
    CHECK(t.at(0) == doctest::Approx(3.0).epsilon(1e-15));
  }

  TEST_CASE("identity projection returns the channel means") {
    Rng rng(7);
    auto m = randn({2, 3, 4, 5}, rng);
    auto t = pool_and_project(m, make_linear({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0}));
    auto u = ops::global_avg_pool(m);
    CHECK(testing::max_abs_diff(t, u) < 1e-15);
  }

  TEST_CASE("pool and project matches the loop oracle") {
    Rng rng(8);
    for (int rep = 0; rep < 5; ++rep) {
      auto m = randn({2, 5, 3, 4}, rng);
      Linear p = make_linear({7, 5}, testing::values(randn({7, 5}, rng)), testing::values(randn({7}, rng)));
      auto t = pool_and_project(m, p);
      auto ref = naive_pool_project(m, p);
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(t.at(i) == doctest::Approx(ref[i]).epsilon(1e-12));
      auto g = global_token(m, p);
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(g.at(i) == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }

  TEST_CASE("projection channel mismatch is rejected") {
    Rng rng(9);
    auto m = randn({1, 4, 2, 2}, rng);
    CHECK_THROWS_AS(pool_and_project(m, make_linear({2, 3}, std::vector<double>(6, 1.0), {0, 0})),
                    std::invalid_argument);
  }

  TEST_CASE("global token closed forms") {
    Tensor m({1, 2, 3, 3}, std::vector<double>(18, 0.625));
    auto t = global_token(m, make_linear({2, 2}, {1, 0, 0, 1}, {0, 0}));
    CHECK(t.at(0) == 0.625);
    CHECK(t.at(1) == 0.625);
    auto b = global_token(m, make_linear({2, 2}, {0, 0, 0, 0}, {0.5, -1.5}));
    CHECK(b.at(0) == 0.5);
    CHECK(b.at(1) == -1.5);
  }

  TEST_CASE("pooling is invariant to shuffling positions") {
    Rng rng(10);
    auto m = randn({2, 3, 4, 4}, rng);
    Linear p = make_linear({5, 3}, testing::values(randn({5, 3}, rng)), testing::values(randn({5}, rng)));
    std::vector<std::size_t> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto flat = ops::reshape(m, {2, 3, 16});
    auto shuffled = ops::reshape(ops::index_select(flat, 2, perm), {2, 3, 4, 4});
    CHECK(testing::max_abs_diff(pool_and_project(m, p), pool_and_project(shuffled, p)) < 1e-12);
  }

  TEST_CASE("content and style paths are independent") {
    Rng rng(11);
    ContentEncoder ce(small_arch(), rng);
    StyleEncoder se(small_arch(), rng);
    auto x = testing::uniform({2, 3, 32, 32}, rng, -1.0, 1.0);
    auto c0 = ce.encode(x);
    auto s0 = se.encode(x);
    perturb(se.parameters(), 0.05);
    auto c1 = ce.encode(x);
    for (std::size_t i = 0; i < kScales; ++i) CHECK(testing::bit_equal(c0.s[i], c1.s[i]));
    auto s1 = se.encode(x);
    CHECK_FALSE(testing::bit_equal(s0.global, s1.global));
    perturb(ce.parameters(), 0.05);
    auto s2 = se.encode(x);
    CHECK(testing::bit_equal(s1.global, s2.global));
    for (std::size_t i = 0; i < kScales; ++i) CHECK(testing::bit_equal(s1.tokens[i], s2.tokens[i]));
  }

  TEST_CASE("content heads") {
    Rng rng(12);
    ContentEncoder ce(small_arch(), rng);
    auto p = ce.encode(testing::uniform({3, 3, 32, 32}, rng, -1.0, 1.0));
    auto e = ce.embed(p);
    CHECK(e.shape() == Shape{3, 12});
    for (std::size_t i = 0; i < 3; ++i) {
      double n = 0.0;
      for (std::size_t j = 0; j < 12; ++j) n += e.at(i * 12 + j) * e.at(i * 12 + j);
      CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(ce.features(p).shape() == Shape{3, 32});
    CHECK(ce.spatial_tokens(p).shape() == Shape{3, 4, 16});
  }
}
