#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "crescendo/tensor.hpp"

namespace crescendo {

/// Element-wise arithmetic mean of equally shaped tensors. The k-input
/// backward contract is that each input receives 1/k of the upstream
/// gradient.
template <typename T>
Tensor<T> elementwise_average(std::span<const Tensor<T>* const> inputs);

template <typename T>
Tensor<T> elementwise_average(const std::vector<Tensor<T>>& inputs);

/// 3x3 convolution, stride 1, one pixel of zero padding on each side, so
/// the spatial extent of [B,Cin,H,W] is preserved. Weights are
/// [Cout,Cin,3,3]; bias is [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias);

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;    // valid when requested
  Tensor<T> weights;  // valid when requested
  Tensor<T> bias;     // valid when requested
};

/// Weight gradients are summed over the batch in sample order regardless
/// of how many workers computed the per-sample terms.
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                               const Tensor<T>& grad_output, bool need_input, bool need_params);

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// 2x2 max-pool with stride 2. Ties resolve to the first element of the
/// window in row-major order.
template <typename T>
PoolResult<T> maxpool2x2(const Tensor<T>& input);

template <typename T>
Tensor<T> maxpool2x2_backward(const Shape& input_shape, std::span<const std::size_t> argmax,
                              const Tensor<T>& grad_output);

/// input [B,F] times weights [F,U] plus bias [U].
template <typename T>
Tensor<T> matmul_bias(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias);

template <typename T>
struct DenseGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
DenseGrads<T> matmul_bias_backward(const Tensor<T>& input, const Tensor<T>& weights,
                                   const Tensor<T>& grad_output, bool need_input, bool need_params);

}  // namespace crescendo
