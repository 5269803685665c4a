#include "crescendo/optim.hpp"

#include <cmath>

namespace crescendo {
namespace {

template <typename T>
typename OptimizerState<T>::Slot& slot_for(OptimizerState<T>& state, std::size_t index, const Shape& shape,
                                           bool with_second) {
  for (auto& s : state.slots) {
    if (s.index == index) return s;
  }
  state.slots.push_back({index, Tensor<T>(shape), with_second ? Tensor<T>(shape) : Tensor<T>()});
  return state.slots.back();
}

// Drops state of entries that are no longer trainable.
template <typename T>
void prune(OptimizerState<T>& state, const ParameterStore<T>& params) {
  std::erase_if(state.slots, [&](const auto& s) { return !params.trainable(s.index); });
}

template <typename T>
const Tensor<T>& gradient_for(const ParameterStore<T>& params, const Gradients<T>& grads, std::size_t i) {
  if (i >= grads.values.size() || !grads.values[i]) {
    throw StructuralError("no gradient for trainable parameter '" + params.entry(i).info.name + "'");
  }
  const Tensor<T>& g = *grads.values[i];
  if (g.shape() != params.value(i).shape()) {
    throw StructuralError("gradient for '" + params.entry(i).info.name + "' has shape " + shape_string(g.shape()) +
                          ", parameter has " + shape_string(params.value(i).shape()));
  }
  return g;
}

}  // namespace

template <typename T>
const typename OptimizerState<T>::Slot* OptimizerState<T>::find(std::size_t index) const {
  for (const auto& s : slots) {
    if (s.index == index) return &s;
  }
  return nullptr;
}

template <typename T>
void adam_step(ParameterStore<T>& params, const Gradients<T>& grads, OptimizerState<T>& state,
               const AdamConfig& config) {
  prune(state, params);
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  const double b1 = config.beta1, b2 = config.beta2;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.trainable(i)) continue;
    const Tensor<T>& g = gradient_for(params, grads, i);
    auto& slot = slot_for(state, i, g.shape(), true);
    Tensor<T>& w = params.value(i);
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double m = b1 * slot.first[j] + (1.0 - b1) * gj;
      const double v = b2 * slot.second[j] + (1.0 - b2) * gj * gj;
      slot.first[j] = static_cast<T>(m);
      slot.second[j] = static_cast<T>(v);
      const double m_hat = m / correction1;
      const double v_hat = v / correction2;
      w[j] = static_cast<T>(w[j] - config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon));
    }
  }
}

template <typename T>
void nesterov_step(ParameterStore<T>& params, const Gradients<T>& grads, OptimizerState<T>& state,
                   const NesterovConfig& config, double learning_rate) {
  if (!(config.momentum >= 0.0 && config.momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
  prune(state, params);
  ++state.step;
  const double mu = config.momentum;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.trainable(i)) continue;
    const Tensor<T>& g = gradient_for(params, grads, i);
    auto& slot = slot_for(state, i, g.shape(), false);
    Tensor<T>& w = params.value(i);
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double v = mu * slot.first[j] - learning_rate * g[j];
      slot.first[j] = static_cast<T>(v);
      w[j] = static_cast<T>(w[j] + v);
    }
  }
}

template <typename T>
NesterovLookahead<T>::NesterovLookahead(ParameterStore<T>& params, const OptimizerState<T>& state,
                                        const NesterovConfig& config)
    : params_(&params) {
  const double mu = config.momentum;
  for (const auto& slot : state.slots) {
    if (!params.trainable(slot.index)) continue;
    Tensor<T>& w = params.value(slot.index);
    saved_.emplace_back(slot.index, w);
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = static_cast<T>(w[j] + mu * slot.first[j]);
  }
}

template <typename T>
void NesterovLookahead<T>::restore() {
  for (auto& [index, original] : saved_) params_->value(index) = std::move(original);
  saved_.clear();
}

ScheduleProfile parse_schedule_profile(std::string_view text) {
  if (text == "cifar") return ScheduleProfile::Cifar;
  if (text == "svhn") return ScheduleProfile::Svhn;
  throw UsageError("unknown schedule profile '" + std::string(text) + "' (expected cifar or svhn)");
}

std::string_view schedule_profile_name(ScheduleProfile profile) {
  return profile == ScheduleProfile::Cifar ? "cifar" : "svhn";
}

double lr_schedule(int epoch, ScheduleProfile profile) {
  if (epoch < 0) throw UsageError("epoch must be nonnegative");
  switch (profile) {
    case ScheduleProfile::Cifar: return epoch < 512 ? 0.1 : 0.01;
    case ScheduleProfile::Svhn:
      if (epoch < 42) return 0.05;
      if (epoch < 63) return 0.005;
      return 0.0005;
  }
  return 0.0;
}

int reference_epochs(ScheduleProfile profile) { return profile == ScheduleProfile::Cifar ? 700 : 70; }

double scaled_lr_schedule(int epoch, int total_epochs, ScheduleProfile profile) {
  if (total_epochs < 1) throw UsageError("total epochs must be positive");
  const long long scaled = static_cast<long long>(epoch) * reference_epochs(profile) / total_epochs;
  return lr_schedule(static_cast<int>(scaled), profile);
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template class NesterovLookahead<float>;
template class NesterovLookahead<double>;
template void adam_step<float>(ParameterStore<float>&, const Gradients<float>&, OptimizerState<float>&,
                               const AdamConfig&);
template void adam_step<double>(ParameterStore<double>&, const Gradients<double>&, OptimizerState<double>&,
                                const AdamConfig&);
template void nesterov_step<float>(ParameterStore<float>&, const Gradients<float>&, OptimizerState<float>&,
                                   const NesterovConfig&, double);
template void nesterov_step<double>(ParameterStore<double>&, const Gradients<double>&, OptimizerState<double>&,
                                    const NesterovConfig&, double);

}  // namespace crescendo
