#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>

#include "crescendo/rng.hpp"
#include "crescendo/tensor.hpp"

namespace crescendo {

/// Train uses batch statistics and live stochastic regularizers; Infer uses
/// running statistics and turns every stochastic regularizer off.
enum class Mode { Train, Infer };

struct BatchNormOptions {
  double momentum = 0.9;  // running <- momentum * running + (1 - momentum) * batch
  double epsilon = 1e-5;
  bool update_running = true;
};

template <typename T>
struct BatchNormParams {
  const Tensor<T>& gamma;
  const Tensor<T>& beta;
  Tensor<T>& running_mean;
  Tensor<T>& running_var;
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::Infer;
  std::vector<T> mean;     // per channel, statistics actually used
  std::vector<T> inv_std;  // 1 / sqrt(var + eps)
};

/// Per-channel normalization over batch and spatial positions of a [B,C,H,W]
/// (or [B,C]) tensor. Batch variance is the biased (population) estimate.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormParams<T> params, Mode mode,
                            const BatchNormOptions& options = {}, BatchNormCache<T>* cache = nullptr);

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& x, const Tensor<T>& gamma, const BatchNormCache<T>& cache,
                                     const Tensor<T>& grad_output, bool need_params);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Gradient through ReLU given its input (or output, the mask is the same).
/// The subgradient at 0 is 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_output);

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  std::optional<Tensor<T>> mask;  // per-element multiplier; empty when dropout is a no-op
};

/// Inverted dropout: survivors are scaled by 1/(1-rate) so Infer is identity.
template <typename T>
DropoutResult<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng);

template <typename T>
Tensor<T> dropout_backward(const std::optional<Tensor<T>>& mask, const Tensor<T>& grad_output);

template <typename T>
struct LossResult {
  T loss;
  Tensor<T> grad;  // d loss / d logits
};

/// Mean negative log-softmax of the true class over the batch.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// Conv-ReLU-BatchNorm unit ------------------------------------------------

template <typename T>
struct UnitParams {
  const Tensor<T>& conv_weights;
  const Tensor<T>& conv_bias;
  BatchNormParams<T> bn;
};

template <typename T>
struct UnitCache {
  Tensor<T> activated;  // ReLU output, i.e. the batch-norm input
  BatchNormCache<T> bn;
};

/// batchnorm(relu(conv(z))), in exactly that order.
template <typename T>
Tensor<T> unit_forward(const Tensor<T>& z, UnitParams<T> params, Mode mode, const BatchNormOptions& options = {},
                       UnitCache<T>* cache = nullptr);

template <typename T>
struct UnitGrads {
  Tensor<T> input;
  Tensor<T> conv_weights;
  Tensor<T> conv_bias;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
UnitGrads<T> unit_backward(const Tensor<T>& z, UnitParams<T> params, const UnitCache<T>& cache,
                           const Tensor<T>& grad_output, bool need_input, bool need_params);

// Finite-difference checking ----------------------------------------------

template <typename T>
struct GradCheckTarget {
  std::string name;
  Tensor<T>* value;          // perturbed in place, restored afterwards
  const Tensor<T>* analytic;  // gradient to verify, same shape as value
  std::function<bool(std::size_t)> skip = {};  // elements excluded from the check
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]" of the worst element
  std::size_t checked = 0;
};

/// Central differences against analytic gradients. The per-element error
/// is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8); the report
/// carries the maximum. objective must be deterministic.
template <typename T>
GradCheckReport grad_check(std::span<const GradCheckTarget<T>> targets, const std::function<T()>& objective,
                           T epsilon);

}  // namespace crescendo
