#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "crescendo/params.hpp"

namespace crescendo {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct NesterovConfig {
  double momentum = 0.9;
};

/// Per-parameter moments (Adam) or velocities (Nesterov, in first), kept
/// only for trainable entries.
template <typename T>
struct OptimizerState {
  struct Slot {
    std::size_t index;
    Tensor<T> first;
    Tensor<T> second;  // unused by Nesterov
  };
  std::vector<Slot> slots;
  std::uint64_t step = 0;

  void reset() {
    slots.clear();
    step = 0;
  }
  const Slot* find(std::size_t index) const;
};

/// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
/// w <- w - lr * m_hat / (sqrt(v_hat) + eps) with bias-corrected moments.
/// Frozen entries are not touched.
template <typename T>
void adam_step(ParameterStore<T>& params, const Gradients<T>& grads, OptimizerState<T>& state,
               const AdamConfig& config);

/// v <- mu v - lr g;  w <- w + v. The gradient must have been evaluated at
/// the lookahead point w + mu v (see NesterovLookahead).
template <typename T>
void nesterov_step(ParameterStore<T>& params, const Gradients<T>& grads, OptimizerState<T>& state,
                   const NesterovConfig& config, double learning_rate);

/// Moves trainable parameters to w + mu v for the gradient evaluation and
/// restores the exact original values on restore() or destruction.
template <typename T>
class NesterovLookahead {
 public:
  NesterovLookahead(ParameterStore<T>& params, const OptimizerState<T>& state, const NesterovConfig& config);
  ~NesterovLookahead() { restore(); }
  NesterovLookahead(const NesterovLookahead&) = delete;
  NesterovLookahead& operator=(const NesterovLookahead&) = delete;

  void restore();

 private:
  ParameterStore<T>* params_;
  std::vector<std::pair<std::size_t, Tensor<T>>> saved_;
};

enum class ScheduleProfile { Cifar, Svhn };

ScheduleProfile parse_schedule_profile(std::string_view text);
std::string_view schedule_profile_name(ScheduleProfile profile);

/// Piecewise-constant Nesterov rates. CIFAR: 0.1, then 0.01 from epoch 512.
/// SVHN: 0.05, 0.005 from epoch 42, 0.0005 from epoch 63.
double lr_schedule(int epoch, ScheduleProfile profile);

/// Whole-net epoch budget the profile's breakpoints were set for (700 / 70).
int reference_epochs(ScheduleProfile profile);

/// lr_schedule with breakpoints rescaled to a run of total_epochs, keeping
/// each breakpoint's fraction of the run.
double scaled_lr_schedule(int epoch, int total_epochs, ScheduleProfile profile);

}  // namespace crescendo
