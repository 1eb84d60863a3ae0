#pragma once

#include <random>
#include <string>
#include <vector>

#include "stylesplit/tensor.hpp"

namespace stylesplit {

// The run's single pseudorandom generator; passed explicitly to every
// sampling call.
using Rng = std::mt19937_64;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

void zero_grads(const ParamList& params);
void set_requires_grad(const ParamList& params, bool flag);
// Largest |grad| over the list; 0 when no gradient buffer was touched.
double max_abs_grad(const ParamList& params);
// Copies values elementwise; names and shapes must line up.
void copy_values(const ParamList& dst, const ParamList& src);
bool values_equal(const ParamList& a, const ParamList& b);
std::vector<std::vector<double>> snapshot(const ParamList& params);

// Uniform fan-in initialization scaled for a leaky-rectifier successor.
Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  Tensor weight, bias;
  std::size_t stride = 1, padding = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;

  Tensor weight, bias;
};

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
};

class Adam {
 public:
  Adam() = default;
  Adam(ParamList params, AdamOptions options);

  // Applies one update from the accumulated gradients, then clears them.
  void step();
  const ParamList& params() const { return params_; }
  const AdamOptions& options() const { return options_; }
  std::size_t steps() const { return steps_; }

  // Moment buffers, exposed for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::size_t steps) { steps_ = steps; }

 private:
  ParamList params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

}  // namespace stylesplit
