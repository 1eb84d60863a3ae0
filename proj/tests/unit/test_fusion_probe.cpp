#include <doctest.h>

#include "helpers.hpp"
#include "stylesplit/fusion_probe.hpp"
#include "stylesplit/ops.hpp"

using namespace stylesplit;
using testing::randn;

namespace {

StyleBundle bundle_of(std::size_t batch, std::size_t d, Rng& rng) {
  StyleBundle b;
  for (auto& t : b.tokens) t = randn({batch, d}, rng);
  for (auto& m : b.maps) m = randn({batch, 1, 1, 1}, rng);
  b.global = randn({batch, d}, rng);
  return b;
}

void set_all(Tensor t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

// Per-class F1 from an explicit confusion matrix.
std::vector<double> confusion_f1(const std::vector<int>& pred, const std::vector<int>& labels, std::size_t classes,
                                 double& accuracy, double& macro) {
  std::vector<std::vector<int>> cm(classes, std::vector<int>(classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) ++cm[labels[i]][pred[i]];
  int correct = 0;
  for (std::size_t c = 0; c < classes; ++c) correct += cm[c][c];
  accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  std::vector<double> f1(classes, std::nan(""));
  double sum = 0.0;
  int present = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    int tp = cm[c][c], row = 0, col = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      row += cm[c][j];
      col += cm[j][c];
    }
    if (row + col == 0) continue;
    f1[c] = 2.0 * tp / static_cast<double>(row + col);
    sum += f1[c];
    ++present;
  }
  macro = sum / present;
  return f1;
}

}  // namespace

TEST_SUITE("fusion_probe") {
  TEST_CASE("aggregation modes") {
    Rng rng(1);
    StyleBundle same;
    auto v = randn({2, 8}, rng);
    for (auto& t : same.tokens) t = v;
    same.global = v;
    CHECK(testing::max_abs_diff(aggregate_tokens(same, AggregateMode::Mean), v) < 1e-15);

    StyleBundle b = bundle_of(2, 128, rng);
    auto cat = aggregate_tokens(b, AggregateMode::Concat);
    CHECK(cat.shape() == Shape{2, 768});
    CHECK(aggregate_dim(AggregateMode::Concat, 128) == 768);
    CHECK(aggregate_dim(AggregateMode::Weighted, 128) == 128);
    // [tG | t5 | t4 | t3 | t2 | t1]
    CHECK(cat.at(0) == b.global.at(0));
    CHECK(cat.at(128) == b.tokens[4].at(0));
    CHECK(cat.at(640) == b.tokens[0].at(0));
    CHECK(cat.at(768 + 5 * 128 + 3) == b.tokens[0].at(128 + 3));

    ScaleWeights only_global{1, 0, 0, 0, 0, 0};
    CHECK(testing::bit_equal(aggregate_tokens(b, AggregateMode::Weighted, only_global),
                             aggregate_tokens(b, AggregateMode::Global)));
    CHECK_THROWS_AS(aggregate_tokens(b, AggregateMode::Weighted), std::invalid_argument);
  }

  TEST_CASE("mean equals sixth weights exactly") {
    Rng rng(2);
    for (int rep = 0; rep < 10; ++rep) {
      StyleBundle b = bundle_of(3, 16, rng);
      ScaleWeights sixth;
      sixth.fill(1.0 / 6.0);
      CHECK(testing::bit_equal(aggregate_tokens(b, AggregateMode::Mean),
                               aggregate_tokens(b, AggregateMode::Weighted, sixth)));
    }
  }

  TEST_CASE("gate stays inside the unit interval") {
    Rng rng(3);
    GateParams p(12, 10, 8, rng);
    for (int rep = 0; rep < 10; ++rep) {
      auto parts = fuse_parts(randn({5, 12}, rng, 4.0), randn({5, 10}, rng, 4.0), p);
      CHECK(parts.gate.shape() == Shape{5, 8});
      for (double g : parts.gate.data()) CHECK((g > 0.0 && g < 1.0));
      CHECK(parts.fused.shape() == Shape{5, 8});
    }
    CHECK_THROWS_AS(fuse(randn({5, 11}, rng), randn({5, 10}, rng), p), std::invalid_argument);
    CHECK_THROWS_AS(fuse(randn({5, 12}, rng), randn({4, 10}, rng), p), std::invalid_argument);
  }

  TEST_CASE("saturated gates select one branch") {
    Rng rng(4);
    GateParams p(12, 10, 8, rng);
    set_all(p.gate.weight, 0.0);
    auto fs = randn({4, 12}, rng), fm = randn({4, 10}, rng);
    set_all(p.gate.bias, 20.0);
    auto hi = fuse_parts(fs, fm, p);
    CHECK(testing::max_abs_diff(hi.z_fus, hi.z_sem) <= 1e-6);
    set_all(p.gate.bias, -20.0);
    auto lo = fuse_parts(fs, fm, p);
    CHECK(testing::max_abs_diff(lo.z_fus, lo.z_sty) <= 1e-6);
  }

  TEST_CASE("equal projected inputs pass through any gate") {
    Rng rng(5);
    GateParams p(6, 6, 6, rng);
    p.proj_sem.weight = p.proj_sty.weight.clone();
    p.proj_sem.bias = p.proj_sty.bias.clone();
    auto f = randn({3, 6}, rng);
    auto parts = fuse_parts(f, f, p);
    CHECK(testing::max_abs_diff(parts.z_sty, parts.z_sem) == 0.0);
    CHECK(testing::max_abs_diff(parts.z_fus, parts.z_sem) <= 1e-14);
  }

  TEST_CASE("separable data is fit perfectly") {
    Rng rng(6);
    std::vector<double> pts;
    std::vector<int> labels;
    std::normal_distribution<double> n(0.0, 0.3);
    for (int i = 0; i < 40; ++i) {
      int c = i % 2;
      pts.push_back((c ? 2.0 : -2.0) + n(rng));
      pts.push_back(n(rng) + 0.5 * (c ? 1.0 : -1.0));
      labels.push_back(c);
    }
    Tensor x({40, 2}, pts);
    ProbeOptions opt;
    opt.seed = 3;
    auto head = probe_train(x, labels, 2, opt);
    auto m = probe_eval(head, x, labels);
    CHECK(m.accuracy == 1.0);
    CHECK(m.macro_f1 == 1.0);

    // deterministic
    auto again = probe_train(x, labels, 2, opt);
    CHECK(testing::bit_equal(again.linear.weight, head.linear.weight));

    // zero epochs returns the initialization
    opt.epochs = 0;
    auto init = probe_train(x, labels, 2, opt);
    auto fresh = probe_init(2, 2, opt.seed);
    CHECK(testing::bit_equal(init.linear.weight, fresh.linear.weight));
    CHECK(testing::bit_equal(init.linear.bias, fresh.linear.bias));
  }

  TEST_CASE("metrics closed forms") {
    auto perfect = classification_metrics({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.macro_f1 == 1.0);
    auto constant = classification_metrics({0, 0, 0, 0}, {0, 0, 1, 1}, 2);
    CHECK(constant.accuracy == 0.5);
    CHECK(constant.macro_f1 == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(constant.f1[1] == 0.0);
    auto absent = classification_metrics({0, 1}, {0, 1}, 3);
    CHECK(std::isnan(absent.f1[2]));
    CHECK(absent.macro_f1 == 1.0);
  }

  TEST_CASE("metrics match the confusion-matrix oracle") {
    Rng rng(7);
    std::uniform_int_distribution<int> cls(0, 4);
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<int> pred(50), labels(50);
      for (int i = 0; i < 50; ++i) {
        pred[i] = cls(rng);
        labels[i] = cls(rng) % 4;
      }
      double acc = 0.0, macro = 0.0;
      auto f1 = confusion_f1(pred, labels, 5, acc, macro);
      auto m = classification_metrics(pred, labels, 5);
      CHECK(m.accuracy == doctest::Approx(acc).epsilon(1e-15));
      CHECK(m.macro_f1 == doctest::Approx(macro).epsilon(1e-14));
      for (std::size_t c = 0; c < 5; ++c) {
        if (std::isnan(f1[c])) {
          CHECK(std::isnan(m.f1[c]));
        } else {
          CHECK(m.f1[c] == doctest::Approx(f1[c]).epsilon(1e-14));
        }
      }
    }
  }

  TEST_CASE("multi-attribute probe reports each attribute and the mean") {
    Rng rng(8);
    auto x = randn({60, 4}, rng);
    std::vector<int> a(60), b(60);
    for (std::size_t i = 0; i < 60; ++i) {
      a[i] = x.at(i * 4) > 0 ? 1 : 0;
      b[i] = x.at(i * 4 + 1) > 0 ? 2 : (x.at(i * 4 + 2) > 0 ? 1 : 0);
    }
    ProbeOptions opt;
    auto probe = probe_train_multi(x, {"a", "b"}, {a, b}, {2, 3}, opt);
    auto m = probe_eval_multi(probe, x, {a, b});
    REQUIRE(m.per_attribute.size() == 2);
    CHECK(m.names == std::vector<std::string>{"a", "b"});
    CHECK(m.mean_accuracy == doctest::Approx((m.per_attribute[0].accuracy + m.per_attribute[1].accuracy) / 2));
    CHECK(m.mean_f1 == doctest::Approx((m.per_attribute[0].macro_f1 + m.per_attribute[1].macro_f1) / 2));
    CHECK(m.per_attribute[0].accuracy > 0.9);
  }

  TEST_CASE("fusion probe learns from the informative branch") {
    Rng rng(9);
    auto sty = randn({80, 6}, rng), sem = randn({80, 5}, rng);
    std::vector<int> labels(80);
    for (std::size_t i = 0; i < 80; ++i) labels[i] = sem.at(i * 5) > 0 ? 1 : 0;
    ProbeOptions opt;
    opt.seed = 2;
    auto probe = fusion_probe_train(sty, sem, labels, 2, 8, opt);
    CHECK(fusion_probe_eval(probe, sty, sem, labels).accuracy >= 0.95);
    CHECK(probe.fused(sty, sem).shape() == Shape{80, 8});
  }

  TEST_CASE("probe training leaves encoder parameters untouched") {
    Rng rng(10);
    ArchConfig a;
    a.image_size = 32;
    a.base_channels = 4;
    a.token_dim = 8;
    StyleEncoder enc(a, rng);
    ContentEncoder cenc(a, rng);
    auto before = snapshot(enc.parameters());
    auto cbefore = snapshot(cenc.parameters());
    auto imgs = testing::uniform({12, 3, 32, 32}, rng, -1.0, 1.0);
    Tensor emb, feat;
    {
      NoGradScope ng;
      emb = aggregate_tokens(enc.encode(imgs), AggregateMode::Mean);
      feat = cenc.features(cenc.encode(imgs));
    }
    std::vector<int> labels{0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2};
    ProbeOptions opt;
    opt.epochs = 20;
    probe_train(emb, labels, 3, opt);
    fusion_probe_train(emb, feat, labels, 3, 8, opt);
    CHECK(snapshot(enc.parameters()) == before);
    CHECK(snapshot(cenc.parameters()) == cbefore);
    CHECK(max_abs_grad(enc.parameters()) == 0.0);
  }
}
