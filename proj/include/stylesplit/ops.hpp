#pragma once

#include <functional>
#include <span>
#include <vector>

#include "stylesplit/tensor.hpp"

// Differentiable forward operations. Images and feature maps are NCHW.
// Shape errors throw std::invalid_argument naming the op and the shapes.
namespace stylesplit::ops {

// Elementwise with numpy-style broadcasting (right-aligned extents).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);

// [M,K] x [K,N] -> [M,N]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x [N,in], weight [out,in], bias [out] (optional) -> [N,out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// x [N,C,H,W], weight [O,C,k,k], bias [O] (optional); zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t padding);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);
Tensor resize_nearest(const Tensor& x, std::size_t height, std::size_t width);
// Average pooling to an arbitrary output grid (adaptive bin edges).
Tensor adaptive_avg_pool(const Tensor& x, std::size_t out_h, std::size_t out_w);
// [N,C,H,W] -> [N,C]
Tensor global_avg_pool(const Tensor& x);
// Per-sample, per-channel standardization over spatial positions.
Tensor instance_norm(const Tensor& x, double eps = 1e-5);
// Standardization over the last axis.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

// Along the last axis.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor logsumexp(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor max(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);

// Ascending stable sort along the last axis; ties keep original order, and
// the gradient follows that same permutation.
Tensor sort_last(const Tensor& x);

// |DFT| over the two trailing axes, computed per leading slice.
Tensor dft2_magnitude(const Tensor& x);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices);
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);

Tensor l1_norm(const Tensor& x);
Tensor l2_norm(const Tensor& x);
// Rows of a [N,D] tensor scaled to unit Euclidean length.
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

}  // namespace stylesplit::ops
