#include "crescendo/regularization.hpp"

namespace crescendo {

std::vector<bool> sample_drop_mask(int scale, const DropPathConfig& config, Rng& rng) {
  if (scale < 1) throw UsageError("drop-path needs at least one branch");
  if (!(config.rate >= 0.0 && config.rate < 1.0)) {
    throw UsageError("drop-path rate must lie in [0, 1), got " + std::to_string(config.rate));
  }
  std::vector<bool> mask(static_cast<std::size_t>(scale), true);
  if (config.rate == 0.0) return mask;
  bool any = false;
  for (std::size_t n = 0; n < mask.size(); ++n) {
    mask[n] = !rng.bernoulli(config.rate);
    any = any || mask[n];
  }
  if (!any) mask[rng.uniform_index(mask.size())] = true;
  return mask;
}

template <typename T>
T l2_penalty(const std::vector<const Tensor<T>*>& weights, double lambda, std::vector<Tensor<T>>* grads) {
  if (lambda < 0.0) throw UsageError("l2 lambda must be nonnegative");
  double total = 0.0;
  if (grads) grads->clear();
  for (const Tensor<T>* w : weights) {
    double sq = 0.0;
    for (T v : w->data()) sq += static_cast<double>(v) * v;
    total += sq;
    if (grads) {
      Tensor<T> g(w->shape());
      const T scale = static_cast<T>(2.0 * lambda);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = scale * (*w)[i];
      grads->push_back(std::move(g));
    }
  }
  return static_cast<T>(lambda * total);
}

template <typename T>
L2Result<T> l2_penalty(const ParameterStore<T>& params, double lambda) {
  std::vector<const Tensor<T>*> weights;
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.entry(i).info.role == ParamRole::FcWeight) {
      weights.push_back(&params.value(i));
      slots.push_back(i);
    }
  }
  std::vector<Tensor<T>> grads;
  L2Result<T> result{l2_penalty<T>(weights, lambda, &grads), {}};
  for (std::size_t k = 0; k < slots.size(); ++k) result.grads.emplace_back(slots[k], std::move(grads[k]));
  return result;
}

template L2Result<float> l2_penalty<float>(const ParameterStore<float>&, double);
template L2Result<double> l2_penalty<double>(const ParameterStore<double>&, double);
template float l2_penalty<float>(const std::vector<const Tensor<float>*>&, double, std::vector<Tensor<float>>*);
template double l2_penalty<double>(const std::vector<const Tensor<double>*>&, double,
                                   std::vector<Tensor<double>>*);

}  // namespace crescendo
