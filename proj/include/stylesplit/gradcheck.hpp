#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stylesplit/tensor.hpp"

namespace stylesplit {

// One differentiable input of one loss at one random point.
struct GradCase {
  std::string name;
  Tensor point;
  std::function<Tensor(const Tensor&)> fn;
};

struct GradCheckRow {
  std::string name;
  std::size_t seeds = 0;
  double worst_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  std::size_t seeds = 20;
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor, so entries whose true gradient is zero are judged on
  // an absolute scale.
  double floor = 1e-8;
};

// Max over entries of |analytic - central| / max(|central|, floor).
// Non-finite values yield +infinity.
double gradient_error(const std::function<Tensor(const Tensor&)>& fn, const Tensor& point, double step, double floor);

// Random smooth points for every loss of the objective and masked-prediction
// modules; all extents are at most 8 except the multi-level texture loss,
// whose three pyramid levels of 4x4 patches need 16x16 inputs.
std::vector<GradCase> gradient_cases(std::uint64_t seed);

// Runs gradient_cases over opt.seeds seeds and reports the worst error per case.
std::vector<GradCheckRow> run_gradient_suite(const GradCheckOptions& opt = {});

}  // namespace stylesplit
