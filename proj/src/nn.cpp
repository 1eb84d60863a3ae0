#include "stylesplit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stylesplit/ops.hpp"

namespace stylesplit {

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

void set_requires_grad(const ParamList& params, bool flag) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(flag);
  }
}

double max_abs_grad(const ParamList& params) {
  double worst = 0.0;
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) worst = std::max(worst, std::fabs(g));
  }
  return worst;
}

void copy_values(const ParamList& dst, const ParamList& src) {
  if (dst.size() != src.size()) throw std::invalid_argument("copy_values: parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i].tensor.shape() != src[i].tensor.shape()) {
      throw std::invalid_argument("copy_values: shape mismatch at " + dst[i].name);
    }
    Tensor d = dst[i].tensor;
    auto s = src[i].tensor.data();
    std::copy(s.begin(), s.end(), d.mutable_data().begin());
  }
}

bool values_equal(const ParamList& a, const ParamList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto x = a[i].tensor.data(), y = b[i].tensor.data();
    if (x.size() != y.size() || !std::equal(x.begin(), x.end(), y.begin())) return false;
  }
  return true;
}

std::vector<std::vector<double>> snapshot(const ParamList& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng, double gain) {
  double bound = gain * std::sqrt(6.0 / ((1.0 + 0.2 * 0.2) * static_cast<double>(fan_in)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride_,
               std::size_t padding_, Rng& rng)
    : weight(init_weight({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng)),
      bias(Tensor::zeros({out_channels}, true)),
      stride(stride_),
      padding(padding_) {}

Tensor Conv2d::operator()(const Tensor& x) const { return ops::conv2d(x, weight, bias, stride, padding); }

void Conv2d::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& rng)
    : weight(init_weight({out_features, in_features}, in_features, rng)),
      bias(Tensor::zeros({out_features}, true)) {}

Tensor Linear::operator()(const Tensor& x) const { return ops::linear(x, weight, bias); }

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Adam::Adam(ParamList params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void Adam::step() {
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_[i].tensor;
    auto w = t.mutable_data();
    if (options_.weight_decay > 0) {
      for (auto& x : w) x -= options_.lr * options_.weight_decay * x;
    }
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      w[j] -= options_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
    }
    t.zero_grad();
  }
}

}  // namespace stylesplit
