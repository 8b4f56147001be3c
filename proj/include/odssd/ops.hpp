#pragma once

#include <cstdint>
#include <span>

#include "odssd/tensor.hpp"

/// Differentiable operators. Every operator takes an optional Graph; pass
/// nullptr for pure inference. When a graph is given and an input requires a
/// gradient, the output requires one too and a reverse node is recorded.
namespace odssd::ops {

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// floor((in + 2*padding - kernel) / stride) + 1
std::int64_t conv_output_size(std::int64_t in, std::int64_t kernel, int stride, int padding);
/// Ceil-mode pooling extent; the last window must start inside the input.
std::int64_t pool_ceil_output_size(std::int64_t in, std::int64_t kernel, int stride);

/// Cross-correlation. x: (N,C,H,W), weight: (O, C/groups, kh, kw), bias: (O).
template <typename T>
Tensor<T> conv2d(Graph<T>* graph, const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 Conv2dOptions options = {});

template <typename T>
Tensor<T> relu(Graph<T>* graph, const Tensor<T>& x);

/// Max pooling without padding, ceil-mode output size; windows hanging over
/// the bottom/right edge only see in-bounds elements.
template <typename T>
Tensor<T> max_pool2d_ceil(Graph<T>* graph, const Tensor<T>& x, int kernel = 3, int stride = 2);

/// (N,Ca,H,W) ++ (N,Cb,H,W) -> (N,Ca+Cb,H,W), a's channels first.
template <typename T>
Tensor<T> channel_concat(Graph<T>* graph, const Tensor<T>& a, const Tensor<T>& b);

/// (N,C,H,W) -> (N,2C,H/2,W): the top half (left view) becomes channels
/// [0,C), the bottom half (right view) channels [C,2C).
template <typename T>
Tensor<T> fold_stacked(Graph<T>* graph, const Tensor<T>& x);

/// Inverse of fold_stacked.
template <typename T>
Tensor<T> unfold_stacked(Graph<T>* graph, const Tensor<T>& x);

/// Depthwise 3x3-style conv (groups = C) -> relu -> pointwise 1x1 conv.
template <typename T>
Tensor<T> separable_conv2d(Graph<T>* graph, const Tensor<T>& x, const Tensor<T>& depthwise_weight,
                           const Tensor<T>& depthwise_bias, const Tensor<T>& pointwise_weight,
                           const Tensor<T>& pointwise_bias, int stride, int padding);

/// Gathers detection head maps (N, A*D, H, W) into one (N, P, D) tensor,
/// P = sum of H*W*A. Order: head, then row-major cell, then anchor.
template <typename T>
Tensor<T> flatten_heads(Graph<T>* graph, std::span<const Tensor<T>> heads, std::int64_t per_prior);

/// Sum of all elements, as a scalar tensor.
template <typename T>
Tensor<T> sum(Graph<T>* graph, const Tensor<T>& x);

/// sum_i x_i * coeffs_i, as a scalar tensor.
template <typename T>
Tensor<T> weighted_sum(Graph<T>* graph, const Tensor<T>& x, std::span<const T> coeffs);

}  // namespace odssd::ops
