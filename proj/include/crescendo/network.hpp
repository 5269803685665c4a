#pragma once

#include <optional>
#include <string>
#include <vector>

#include "crescendo/arch.hpp"
#include "crescendo/layers.hpp"
#include "crescendo/params.hpp"

namespace crescendo {

/// true = branch active. One entry per branch of a block.
using BranchMask = std::vector<bool>;

// Crescendo block -------------------------------------------------------------

template <typename T>
struct BlockParams {
  std::vector<std::vector<UnitParams<T>>> branches;  // [branch][unit]
};

template <typename T>
struct BranchTape {
  std::vector<UnitCache<T>> units;
  std::vector<Tensor<T>> hidden;  // outputs of every unit but the last
};

template <typename T>
struct BlockTape {
  BranchMask active;
  std::vector<std::optional<BranchTape<T>>> branches;
};

/// Averages the outputs of the active branches, each a chain of
/// Conv-ReLU-BatchNorm units applied to z. Throws UsageError on an empty mask.
template <typename T>
Tensor<T> block_forward(const BlockParams<T>& params, const Tensor<T>& z, const BranchMask& active, Mode mode,
                        const BatchNormOptions& bn = {}, BlockTape<T>* tape = nullptr);

template <typename T>
struct BlockGrads {
  Tensor<T> input;                                          // valid when requested
  std::vector<std::vector<std::optional<UnitGrads<T>>>> units;  // [branch][unit]
};

/// need_params(branch, unit) selects the units whose parameter gradients
/// are computed (0-based indices).
template <typename T>
BlockGrads<T> block_backward(const BlockParams<T>& params, const Tensor<T>& z, const BlockTape<T>& tape,
                             const Tensor<T>& grad_output, bool need_input,
                             const std::function<bool(std::size_t, std::size_t)>& need_params);

// Whole network -------------------------------------------------------------------

struct ForwardOptions {
  Mode mode = Mode::Infer;
  std::vector<BranchMask> masks;  // one per block; empty means every branch active
  double dropout_rate = 0.0;
  Rng* dropout_rng = nullptr;     // required when training with dropout
  BatchNormOptions bn;
};

template <typename T>
struct DenseTape {
  Tensor<T> input;
  Tensor<T> activated;  // ReLU output
  std::optional<Tensor<T>> dropout_mask;
};

template <typename T>
struct Tape {
  std::vector<Tensor<T>> block_inputs;
  std::vector<BlockTape<T>> blocks;
  std::vector<Shape> pool_input_shapes;
  std::vector<std::vector<std::size_t>> pool_argmax;
  Shape flatten_shape;
  DenseTape<T> fc1;
  DenseTape<T> fc2;
  Tensor<T> logits_input;

  /// Name of the first recorded tensor holding a NaN or Inf, if any.
  std::optional<std::string> first_non_finite() const;
};

/// Network topology over an external ParameterStore laid out by
/// make_parameter_plan(spec).
template <typename T>
class Network {
 public:
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const noexcept { return spec_; }
  const ParameterPlan& plan() const noexcept { return plan_; }

  /// Throws StructuralError unless names and shapes match the plan in order.
  void check_store(const ParameterStore<T>& params) const;

  /// Logits [B, classes]. In Train mode BN running statistics are updated.
  Tensor<T> forward(ParameterStore<T>& params, const Tensor<T>& input, const ForwardOptions& options,
                    Tape<T>* tape = nullptr) const;

  /// Infer-mode logits with only the masked branches active. Does not mutate params.
  Tensor<T> infer(const ParameterStore<T>& params, const Tensor<T>& input,
                  const std::vector<BranchMask>& masks = {}) const;

  /// Fills grads for every trainable entry (zeros where the entry did not
  /// take part in the forward pass). Returns d loss / d input when asked.
  std::optional<Tensor<T>> backward(const ParameterStore<T>& params, const Tape<T>& tape,
                                    const Tensor<T>& grad_logits, Gradients<T>& grads,
                                    bool need_input_grad = false) const;

  /// Store indices of the first slot (conv_w) of a unit, 0-based indices.
  std::size_t unit_slot(std::size_t block, std::size_t branch, std::size_t unit) const {
    return unit_slots_[block][branch][unit];
  }
  std::size_t head_slot() const noexcept { return head_slot_; }

  /// Indices of the learnable entries belonging to branch n (1-based) of every block.
  std::vector<std::size_t> branch_slots(int n) const;

  BlockParams<T> block_params(ParameterStore<T>& params, std::size_t block) const;

 private:
  NetworkSpec spec_;
  ParameterPlan plan_;
  std::vector<std::vector<std::vector<std::size_t>>> unit_slots_;
  std::size_t head_slot_ = 0;
};

/// The network restricted to one path set in every block, sharing the
/// parameters of the whole network.
template <typename T>
class Subnet {
 public:
  Subnet(const Network<T>& net, const ParameterStore<T>& params, PathSet paths);

  const PathSet& paths() const noexcept { return paths_; }
  int depth() const { return subnet_depth(net_->spec(), paths_); }
  Tensor<T> forward(const Tensor<T>& input) const;

 private:
  const Network<T>* net_;
  const ParameterStore<T>* params_;
  PathSet paths_;
  std::vector<BranchMask> masks_;
};

template <typename T>
Subnet<T> subnet(const Network<T>& net, const ParameterStore<T>& params, PathSet paths) {
  return Subnet<T>(net, params, std::move(paths));
}

/// argmax per row of [B, K] logits.
template <typename T>
std::vector<int> predict_classes(const Tensor<T>& logits);

}  // namespace crescendo
