#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stylesplit/tensor.hpp"

namespace stylesplit {

inline constexpr std::size_t kContentClasses = 4;  // circle, triangle, square, cross
inline constexpr std::size_t kStyleClasses = 9;    // clean + 4 overlays x 2 intensities

const char* content_class_name(std::size_t id);
// "clean", "tint-1", "tint-2", "diffusion-1", ..., "streaks-2"
std::string style_class_name(std::size_t id);

struct DatasetConfig {
  std::size_t image_size = 64;
  std::size_t content_classes = kContentClasses;  // uses the first N shapes
  std::size_t style_classes = kStyleClasses;      // uses the first N appearance classes
};

struct SyntheticSample {
  std::vector<float> image;  // [3,S,S] in [-1,1]
  int content_label = 0;
  int style_label = 0;
  std::uint64_t seed = 0;
};

// Per-sample seed: a mix of the run seed and the sample index, so samples
// can be rendered in any order.
std::uint64_t sample_seed(std::uint64_t run_seed, std::uint64_t index);

// Labels are drawn independently; the image is a pure function of the seed.
SyntheticSample render_sample(std::uint64_t seed, const DatasetConfig& cfg);
std::vector<SyntheticSample> generate_dataset(std::size_t n, const DatasetConfig& cfg, std::uint64_t run_seed);

// Stacks the listed samples into an NCHW batch.
Tensor batch_images(const std::vector<SyntheticSample>& data, const std::vector<std::size_t>& indices);
std::vector<int> content_labels(const std::vector<SyntheticSample>& data, const std::vector<std::size_t>& indices);
std::vector<int> style_labels(const std::vector<SyntheticSample>& data, const std::vector<std::size_t>& indices);

}  // namespace stylesplit
