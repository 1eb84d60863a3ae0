#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "helpers.hpp"
#include "stylesplit/objectives.hpp"
#include "stylesplit/ops.hpp"

using namespace stylesplit;
using testing::randn;

namespace {

Tensor filled(Shape s, double v) { return Tensor(s, std::vector<double>(shape_numel(s), v)); }

Tensor unit_rows(Shape s, Rng& rng) { return ops::l2_normalize_rows(randn(std::move(s), rng)); }

StyleBundle random_bundle(std::size_t batch, std::size_t d, Rng& rng) {
  StyleBundle b;
  for (auto& t : b.tokens) t = randn({batch, d}, rng);
  for (auto& m : b.maps) m = randn({batch, 1, 1, 1}, rng);
  b.global = randn({batch, d}, rng);
  return b;
}

double dot(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  std::size_t d = a.size(1);
  double s = 0.0;
  for (std::size_t c = 0; c < d; ++c) s += a.at(i * d + c) * b.at(j * d + c);
  return s;
}

double nce_oracle(const Tensor& q, const Tensor& k, const Tensor& queue, double tau) {
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(0); ++i) {
    std::vector<double> logits{dot(q, i, k, i) / tau};
    if (queue.defined())
      for (std::size_t j = 0; j < queue.size(0); ++j) logits.push_back(dot(q, i, queue, j) / tau);
    double m = *std::max_element(logits.begin(), logits.end()), s = 0.0;
    for (double l : logits) s += std::exp(l - m);
    total += -(logits[0] - m - std::log(s));
  }
  return total / static_cast<double>(q.size(0));
}

}  // namespace

TEST_SUITE("objectives") {
  TEST_CASE("hinge discriminator loss") {
    CHECK(hinge_d(filled({2, 1, 3, 3}, 1.0), filled({2, 1, 3, 3}, -1.0)).item() == 0.0);
    CHECK(hinge_d(filled({2, 1, 3, 3}, 0.0), filled({2, 1, 3, 3}, 0.0)).item() == 2.0);
    Rng rng(1);
    auto r = randn({2, 1, 4, 4}, rng, 1.5), f = randn({2, 1, 4, 4}, rng, 1.5);
    double ref = 0.0;
    for (std::size_t i = 0; i < 32; ++i) ref += std::max(0.0, 1.0 - r.at(i)) + std::max(0.0, 1.0 + f.at(i));
    CHECK(hinge_d(r, f).item() == doctest::Approx(ref / 32.0).epsilon(1e-13));
    CHECK(hinge_d(r, f).item() >= 0.0);
  }

  TEST_CASE("generator adversarial term") {
    CHECK(adv_g(filled({2, 1, 2, 2}, 1.0)).item() == -1.0);
    CHECK(adv_g(filled({2, 1, 2, 2}, 0.0)).item() == 0.0);
    Rng rng(2);
    auto f = randn({3, 1, 4, 4}, rng);
    double m = std::accumulate(f.data().begin(), f.data().end(), 0.0) / 48.0;
    CHECK(adv_g(f).item() == doctest::Approx(-m).epsilon(1e-13));
  }

  TEST_CASE("style token consistency") {
    Rng rng(3);
    StyleBundle a = random_bundle(2, 128, rng);
    CHECK(style_token_consistency(a, a).item() == 0.0);
    StyleBundle b = a;
    for (auto& t : b.tokens) t = ops::add_scalar(t, 1.0);
    b.global = ops::add_scalar(a.global, 1.0);
    CHECK(style_token_consistency(b, a).item() == doctest::Approx(768.0).epsilon(1e-12));

    StyleBundle c = random_bundle(2, 5, rng), d = random_bundle(2, 5, rng);
    double ref = 0.0;
    for (std::size_t i = 0; i < 10; ++i) {
      ref += std::fabs(c.global.at(i) - d.global.at(i));
      for (std::size_t s = 0; s < kScales; ++s) ref += std::fabs(c.tokens[s].at(i) - d.tokens[s].at(i));
    }
    CHECK(style_token_consistency(c, d).item() == doctest::Approx(ref / 2.0).epsilon(1e-13));
  }

  TEST_CASE("contrastive loss closed forms") {
    for (std::size_t k : {1u, 3u, 7u}) {
      // q = k = e0, negatives e1..eK
      std::vector<double> qv(8, 0.0), negs(k * 8, 0.0);
      qv[0] = 1.0;
      for (std::size_t i = 0; i < k; ++i) negs[i * 8 + i + 1] = 1.0;
      Tensor q({1, 8}, qv), queue({k, 8}, negs);
      double expect = std::log(1.0 + static_cast<double>(k) * std::exp(-1.0));
      CHECK(std::fabs(info_nce(q, q, queue, 1.0).item() - expect) <= 1e-12);
    }
    Tensor q({1, 3}, {0, 1, 0});
    CHECK(info_nce(q, q, Tensor(), 0.2).item() == 0.0);
    CHECK_THROWS_AS(info_nce(q, q, Tensor(), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(info_nce(q, q, Tensor(), -1.0), std::invalid_argument);
  }

  TEST_CASE("contrastive loss matches the log-sum-exp oracle") {
    Rng rng(4);
    for (int rep = 0; rep < 10; ++rep) {
      auto q = unit_rows({3, 6}, rng), k = unit_rows({3, 6}, rng), queue = unit_rows({4, 6}, rng);
      double v = info_nce(q, k, queue, 0.2).item();
      CHECK(std::fabs(v - nce_oracle(q, k, queue, 0.2)) <= 1e-12);
      CHECK(v >= 0.0);
    }
  }

  TEST_CASE("patch contrast closed forms") {
    const std::size_t p = 5;
    std::vector<double> eye(p * p, 0.0);
    for (std::size_t i = 0; i < p; ++i) eye[i * p + i] = 1.0;
    Tensor f({p, p}, eye);
    double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + static_cast<double>(p - 1)));
    CHECK(patch_nce({f}, {f}, 1.0).item() == doctest::Approx(expect).epsilon(1e-13));
    Tensor one({1, 3}, {0.6, 0.8, 0.0});
    CHECK(patch_nce({one}, {one}, 0.2).item() == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
    CHECK_THROWS_AS(patch_nce({f}, {Tensor({4, p}, std::vector<double>(4 * p, 0.1))}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(patch_nce({f, f}, {f}, 1.0), std::invalid_argument);
  }

  TEST_CASE("patch contrast matches the double-loop oracle") {
    Rng rng(5);
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<Tensor> src{unit_rows({6, 4}, rng), unit_rows({5, 7}, rng)};
      std::vector<Tensor> sty{unit_rows({6, 4}, rng), unit_rows({5, 7}, rng)};
      double ref = 0.0;
      for (std::size_t l = 0; l < 2; ++l) {
        std::size_t n = src[l].size(0);
        double layer = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          double pos = std::exp(dot(src[l], i, sty[l], i) / 0.2), den = 0.0;
          for (std::size_t j = 0; j < n; ++j) den += std::exp(dot(src[l], i, sty[l], j) / 0.2);
          layer += -std::log(pos / den);
        }
        ref += layer / static_cast<double>(n);
      }
      double v = patch_nce(src, sty, 0.2).item();
      CHECK(v == doctest::Approx(ref).epsilon(1e-12));
      CHECK(v >= 0.0);
    }
  }

  TEST_CASE("reconstruction error") {
    Rng rng(6);
    auto x = randn({2, 3, 4, 4}, rng);
    CHECK(reconstruction_loss(x, x).item() == 0.0);
    CHECK(reconstruction_loss(ops::add_scalar(x, 0.5), x).item() == doctest::Approx(0.5).epsilon(1e-14));
    auto y = randn({2, 3, 4, 4}, rng);
    double ref = 0.0;
    for (std::size_t i = 0; i < 96; ++i) ref += std::fabs(x.at(i) - y.at(i));
    CHECK(reconstruction_loss(x, y).item() == doctest::Approx(ref / 96.0).epsilon(1e-13));
  }

  TEST_CASE("frequency amplitude loss") {
    Rng rng(7);
    auto y = randn({2, 3, 6, 6}, rng);
    CHECK(fft_amplitude_loss(y, y).item() == 0.0);
    // circular shift by (2, 5)
    std::vector<double> shifted(y.numel());
    for (std::size_t nc = 0; nc < 6; ++nc)
      for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 6; ++j) shifted[nc * 36 + ((i + 2) % 6) * 6 + (j + 5) % 6] = y.at(nc * 36 + i * 6 + j);
    CHECK(fft_amplitude_loss(Tensor(y.shape(), shifted), y).item() <= 1e-10);

    const double c1 = 0.3, c2 = 0.8, eps = 1e-6;
    double v = fft_amplitude_loss(filled({1, 3, 4, 4}, c1), filled({1, 3, 4, 4}, c2), eps).item();
    CHECK(v == doctest::Approx(std::fabs(std::log(16 * c1 + eps) - std::log(16 * c2 + eps)) / 16.0).epsilon(1e-9));
  }

  TEST_CASE("sliced distance closed forms") {
    Tensor a({2, 1}, {0.0, 1.0}), b({2, 1}, {1.0, 2.0}), dir({1, 1}, {1.0});
    CHECK(swd_loss_with_directions(a, b, dir).item() == doctest::Approx(1.0).epsilon(1e-15));
    Rng rng(8);
    auto p = randn({12, 5}, rng);
    CHECK(swd_loss(p, p, 8, rng).item() == 0.0);
    CHECK_THROWS_AS(swd_loss_with_directions(Tensor(), b, dir), std::invalid_argument);
  }

  TEST_CASE("sliced distance ignores patch order and is symmetric") {
    Rng rng(9);
    auto a = randn({10, 4}, rng), b = randn({10, 4}, rng);
    auto dirs = ops::transpose(unit_rows({6, 4}, rng));
    std::vector<std::size_t> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    double base = swd_loss_with_directions(a, b, dirs).item();
    CHECK(std::fabs(swd_loss_with_directions(ops::index_select(a, 0, perm), b, dirs).item() - base) <= 1e-12);
    CHECK(std::fabs(swd_loss_with_directions(a, ops::index_select(b, 0, perm), dirs).item() - base) <= 1e-12);
    CHECK(std::fabs(swd_loss_with_directions(b, a, dirs).item() - base) <= 1e-12);
    Rng r1(77), r2(77);
    CHECK(swd_loss(a, b, 16, r1).item() == swd_loss(b, a, 16, r2).item());
    auto x = randn({1, 3, 8, 8}, rng), y = randn({1, 3, 8, 8}, rng);
    CHECK(fft_amplitude_loss(x, y).item() == doctest::Approx(fft_amplitude_loss(y, x).item()).epsilon(1e-14));
  }

  TEST_CASE("losses are nonnegative on random inputs") {
    Rng rng(10);
    for (int rep = 0; rep < 10; ++rep) {
      auto x = randn({2, 3, 16, 16}, rng), y = randn({2, 3, 16, 16}, rng);
      CHECK(fft_amplitude_loss(x, y).item() >= 0.0);
      CHECK(swd_texture_loss(x, y, 8, rng).item() >= 0.0);
      CHECK(reconstruction_loss(x, y).item() >= 0.0);
      CHECK(hinge_d(randn({2, 1, 2, 2}, rng, 3.0), randn({2, 1, 2, 2}, rng, 3.0)).item() >= 0.0);
    }
  }

  TEST_CASE("frequency and texture losses grow with perturbation size") {
    const double sigmas[4] = {0.0, 0.1, 0.2, 0.4};
    double fft[4] = {}, swd[4] = {};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(100 + seed);
      auto y = testing::uniform({1, 3, 16, 16}, rng, 0.1, 0.9);
      auto noise = randn(y.shape(), rng);
      for (int s = 0; s < 4; ++s) {
        auto x = ops::add(y, ops::mul_scalar(noise, sigmas[s]));
        Rng proj(seed);
        fft[s] += fft_amplitude_loss(x, y).item();
        swd[s] += swd_texture_loss(x, y, 32, proj).item();
      }
    }
    for (int s = 1; s < 4; ++s) {
      CHECK(fft[s] >= fft[s - 1]);
      CHECK(swd[s] >= swd[s - 1]);
    }
  }

  TEST_CASE("laplacian levels and patches") {
    Rng rng(11);
    auto img = randn({2, 3, 16, 16}, rng);
    auto pyr = laplacian_pyramid(img, 3);
    REQUIRE(pyr.size() == 3);
    CHECK(pyr[0].size(2) == 16);
    CHECK(pyr[1].size(2) == 8);
    CHECK(pyr[2].size(2) == 4);
    auto patches = extract_patches(img, 4);
    CHECK(patches.shape() == Shape{2 * 16, 48});
  }

  TEST_CASE("gram matrix") {
    auto g = gram_matrix(filled({1, 2, 2}, 1.0));
    CHECK(g.shape() == Shape{1, 1});
    CHECK(g.at(0) == 1.0);
    Rng rng(12);
    auto ch = randn({1, 3, 3}, rng);
    auto two = gram_matrix(ops::concat({ch, ch}, 0));
    CHECK(two.at(0) == two.at(1));
    CHECK(two.at(1) == two.at(2));
    CHECK(two.at(2) == two.at(3));

    for (int rep = 0; rep < 10; ++rep) {
      auto f = randn({4, 3, 5}, rng);
      auto gm = gram_matrix(f);
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
          double ref = 0.0;
          for (std::size_t s = 0; s < 15; ++s) ref += f.at(i * 15 + s) * f.at(j * 15 + s);
          CHECK(gm.at(i * 4 + j) == doctest::Approx(ref / 15.0).epsilon(1e-12));
          CHECK(gm.at(i * 4 + j) == gm.at(j * 4 + i));
        }
      // v^T G v >= 0
      for (int k = 0; k < 5; ++k) {
        auto v = randn({4}, rng);
        double quad = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
          for (std::size_t j = 0; j < 4; ++j) quad += v.at(i) * gm.at(i * 4 + j) * v.at(j);
        CHECK(quad >= -1e-12);
      }
    }
  }

  TEST_CASE("weighted total") {
    LossWeights zero;
    for (const auto& [name, w] : zero.named()) zero.set(name, 0.0);
    std::map<std::string, Tensor> parts;
    Rng rng(13);
    for (const auto& [name, w] : zero.named()) parts[name] = Tensor({1}, {std::fabs(randn({1}, rng).at(0))});
    CHECK(total_loss(parts, zero).item() == 0.0);

    LossWeights one = zero;
    one.set("rec", 1.0);
    CHECK(total_loss({{"rec", Tensor({1}, {2.5})}}, one).item() == 2.5);

    LossWeights w;
    double ref = 0.0;
    std::uniform_real_distribution<double> u(0.0, 3.0);
    for (const auto& [name, _] : w.named()) {
      w.set(name, u(rng));
      ref += w.get(name) * parts[name].item();
    }
    CHECK(total_loss(parts, w).item() == doctest::Approx(ref).epsilon(1e-13));

    LossWeights bad;
    bad.set("swd", -0.5);
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS(w.get("nonsense"));
  }
}
