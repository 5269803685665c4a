#pragma once

#include <vector>

#include "crescendo/params.hpp"
#include "crescendo/rng.hpp"

namespace crescendo {

struct DropPathConfig {
  double rate = 0.0;  // per-branch drop probability, in [0, 1)
};

/// Drops each of the scale branches independently with probability rate.
/// If every branch was dropped, one uniformly chosen branch is revived, so
/// the returned mask (true = active) always has an active branch.
std::vector<bool> sample_drop_mask(int scale, const DropPathConfig& config, Rng& rng);

template <typename T>
struct L2Result {
  T penalty;
  std::vector<std::pair<std::size_t, Tensor<T>>> grads;  // (store index, 2 * lambda * w)
};

/// lambda * sum of squared entries over the dense-layer weight matrices of
/// the store (biases and conv weights excluded).
template <typename T>
L2Result<T> l2_penalty(const ParameterStore<T>& params, double lambda);

/// Same penalty over an explicit tensor list.
template <typename T>
T l2_penalty(const std::vector<const Tensor<T>*>& weights, double lambda, std::vector<Tensor<T>>* grads = nullptr);

}  // namespace crescendo
