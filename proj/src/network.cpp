#include "crescendo/network.hpp"

#include "crescendo/kernels.hpp"

namespace crescendo {
namespace {

std::size_t active_count(const BranchMask& mask) {
  std::size_t n = 0;
  for (bool on : mask) n += on ? 1 : 0;
  return n;
}

template <typename T>
DropoutResult<T> maybe_dropout(const Tensor<T>& x, const ForwardOptions& options) {
  if (options.mode == Mode::Infer || options.dropout_rate == 0.0) return {x, std::nullopt};
  if (!options.dropout_rng) throw UsageError("training with dropout requires a dropout rng");
  return dropout(x, options.dropout_rate, options.mode, *options.dropout_rng);
}

template <typename T>
bool has_non_finite(const Tensor<T>& t) {
  return !t.all_finite();
}

}  // namespace

template <typename T>
Tensor<T> block_forward(const BlockParams<T>& params, const Tensor<T>& z, const BranchMask& active, Mode mode,
                        const BatchNormOptions& bn, BlockTape<T>* tape) {
  const std::size_t scale = params.branches.size();
  if (active.size() != scale) {
    throw UsageError("branch mask has " + std::to_string(active.size()) + " entries for a block of scale " +
                     std::to_string(scale));
  }
  if (active_count(active) == 0) throw UsageError("block_forward needs at least one active branch");
  if (tape) {
    tape->active = active;
    tape->branches.assign(scale, std::nullopt);
  }
  std::vector<Tensor<T>> finals;
  finals.reserve(scale);
  for (std::size_t n = 0; n < scale; ++n) {
    if (!active[n]) continue;
    const auto& units = params.branches[n];
    auto unit = [&](const Tensor<T>& in, std::size_t k, UnitCache<T>* unit_tape) {
      try {
        return unit_forward(in, units[k], mode, bn, unit_tape);
      } catch (const NumericalError& e) {
        throw NumericalError("branch" + std::to_string(n + 1) + "/unit" + std::to_string(k + 1) + ": " + e.what());
      }
    };
    if (tape) {
      BranchTape<T>& bt = tape->branches[n].emplace();
      bt.units.resize(units.size());
      bt.hidden.reserve(units.size() - 1);
      const Tensor<T>* in = &z;
      for (std::size_t k = 0; k < units.size(); ++k) {
        Tensor<T> out = unit(*in, k, &bt.units[k]);
        if (k + 1 < units.size()) {
          bt.hidden.push_back(std::move(out));
          in = &bt.hidden.back();
        } else {
          finals.push_back(std::move(out));
        }
      }
    } else {
      Tensor<T> cur = unit(z, 0, nullptr);
      for (std::size_t k = 1; k < units.size(); ++k) cur = unit(cur, k, nullptr);
      finals.push_back(std::move(cur));
    }
  }
  return elementwise_average(finals);
}

template <typename T>
BlockGrads<T> block_backward(const BlockParams<T>& params, const Tensor<T>& z, const BlockTape<T>& tape,
                             const Tensor<T>& grad_output, bool need_input,
                             const std::function<bool(std::size_t, std::size_t)>& need_params) {
  const std::size_t scale = params.branches.size();
  const T k = static_cast<T>(active_count(tape.active));
  Tensor<T> shared(grad_output.shape());
  for (std::size_t i = 0; i < shared.size(); ++i) shared[i] = grad_output[i] / k;

  BlockGrads<T> grads;
  grads.units.resize(scale);
  if (need_input) grads.input = Tensor<T>(z.shape());

  for (std::size_t n = 0; n < scale; ++n) {
    const auto& units = params.branches[n];
    grads.units[n].resize(units.size());
    if (!tape.active[n]) continue;
    const BranchTape<T>& bt = *tape.branches[n];

    // Input gradients are only needed down to the first unit that wants
    // parameter gradients, unless the block input gradient is requested.
    std::size_t lowest = units.size();
    for (std::size_t u = 0; u < units.size(); ++u) {
      if (need_params(n, u)) {
        lowest = u;
        break;
      }
    }
    if (!need_input && lowest == units.size()) continue;

    Tensor<T> g = shared;
    for (std::size_t u = units.size(); u-- > 0;) {
      const Tensor<T>& in = u == 0 ? z : bt.hidden[u - 1];
      const bool want_params = need_params(n, u);
      const bool want_input = u > 0 ? (need_input || u > lowest) : need_input;
      UnitGrads<T> ug = unit_backward(in, units[u], bt.units[u], g, want_input, want_params);
      g = std::move(ug.input);
      if (want_params) grads.units[n][u] = std::move(ug);
      if (!want_input) break;
    }
    if (need_input) {
      for (std::size_t i = 0; i < g.size(); ++i) grads.input[i] += g[i];
    }
  }
  return grads;
}

template <typename T>
std::optional<std::string> Tape<T>::first_non_finite() const {
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b + 1);
    if (b < block_inputs.size() && has_non_finite(block_inputs[b])) return prefix + " input";
    for (std::size_t n = 0; n < blocks[b].branches.size(); ++n) {
      if (!blocks[b].branches[n]) continue;
      const BranchTape<T>& bt = *blocks[b].branches[n];
      for (std::size_t u = 0; u < bt.units.size(); ++u) {
        const std::string unit = prefix + "/branch" + std::to_string(n + 1) + "/unit" + std::to_string(u + 1);
        if (has_non_finite(bt.units[u].activated)) return unit + " activation";
        if (u < bt.hidden.size() && has_non_finite(bt.hidden[u])) return unit + " output";
      }
    }
  }
  if (has_non_finite(fc1.input)) return std::string("fc1 input");
  if (has_non_finite(fc1.activated)) return std::string("fc1 activation");
  if (has_non_finite(fc2.input)) return std::string("fc2 input");
  if (has_non_finite(fc2.activated)) return std::string("fc2 activation");
  if (has_non_finite(logits_input)) return std::string("logits input");
  return std::nullopt;
}

template <typename T>
Network<T>::Network(NetworkSpec spec) : spec_(std::move(spec)), plan_(make_parameter_plan(spec_)) {
  std::size_t slot = 0;
  unit_slots_.resize(spec_.blocks.size());
  for (std::size_t b = 0; b < spec_.blocks.size(); ++b) {
    const BlockSpec& block = spec_.blocks[b];
    unit_slots_[b].resize(static_cast<std::size_t>(block.scale));
    for (int n = 1; n <= block.scale; ++n) {
      const std::size_t units = static_cast<std::size_t>(n * block.interval);
      for (std::size_t u = 0; u < units; ++u) {
        unit_slots_[b][static_cast<std::size_t>(n - 1)].push_back(slot);
        slot += kUnitSlots;
      }
    }
  }
  head_slot_ = slot;
}

template <typename T>
void Network<T>::check_store(const ParameterStore<T>& params) const {
  if (params.size() != plan_.size()) {
    throw StructuralError("parameter store has " + std::to_string(params.size()) + " entries, network needs " +
                          std::to_string(plan_.size()));
  }
  for (std::size_t i = 0; i < plan_.size(); ++i) {
    const auto& e = params.entry(i);
    if (e.info.name != plan_[i].name || e.value.shape() != plan_[i].shape) {
      throw StructuralError("parameter slot " + std::to_string(i) + " holds '" + e.info.name + "' " +
                            shape_string(e.value.shape()) + ", expected '" + plan_[i].name + "' " +
                            shape_string(plan_[i].shape));
    }
  }
}

template <typename T>
BlockParams<T> Network<T>::block_params(ParameterStore<T>& params, std::size_t block) const {
  BlockParams<T> bp;
  for (const auto& branch : unit_slots_[block]) {
    auto& units = bp.branches.emplace_back();
    units.reserve(branch.size());
    for (std::size_t s : branch) {
      units.push_back(UnitParams<T>{params.value(s), params.value(s + 1),
                                    BatchNormParams<T>{params.value(s + 2), params.value(s + 3),
                                                       params.value(s + 4), params.value(s + 5)}});
    }
  }
  return bp;
}

template <typename T>
std::vector<std::size_t> Network<T>::branch_slots(int n) const {
  std::vector<std::size_t> slots;
  for (const auto& block : unit_slots_) {
    if (n < 1 || static_cast<std::size_t>(n) > block.size()) {
      throw UsageError("branch " + std::to_string(n) + " does not exist");
    }
    for (std::size_t s : block[static_cast<std::size_t>(n - 1)]) {
      for (std::size_t r = 0; r < kUnitSlots; ++r) {
        if (is_learnable(plan_[s + r].role)) slots.push_back(s + r);
      }
    }
  }
  return slots;
}

template <typename T>
Tensor<T> Network<T>::forward(ParameterStore<T>& params, const Tensor<T>& input, const ForwardOptions& options,
                              Tape<T>* tape) const {
  check_store(params);
  if (input.rank() != 4 || input.dim(1) != static_cast<std::size_t>(spec_.in_channels) ||
      input.dim(2) != static_cast<std::size_t>(spec_.height) ||
      input.dim(3) != static_cast<std::size_t>(spec_.width)) {
    throw StructuralError("network input " + shape_string(input.shape()) + " does not match [B," +
                          std::to_string(spec_.in_channels) + "," + std::to_string(spec_.height) + "," +
                          std::to_string(spec_.width) + "]");
  }
  const std::size_t blocks = spec_.blocks.size();
  if (!options.masks.empty() && options.masks.size() != blocks) {
    throw UsageError("expected one branch mask per block");
  }
  const BranchMask all(static_cast<std::size_t>(spec_.scale()), true);
  if (tape) {
    *tape = Tape<T>{};
    tape->block_inputs.reserve(blocks);
    tape->blocks.reserve(blocks);
  }

  Tensor<T> current = input;
  for (std::size_t b = 0; b < blocks; ++b) {
    const BranchMask& mask = options.masks.empty() ? all : options.masks[b];
    const BlockParams<T> bp = block_params(params, b);
    Tensor<T> out;
    try {
      if (tape) {
        tape->block_inputs.push_back(std::move(current));
        out = block_forward(bp, tape->block_inputs.back(), mask, options.mode, options.bn,
                            &tape->blocks.emplace_back());
      } else {
        out = block_forward(bp, current, mask, options.mode, options.bn);
      }
    } catch (const NumericalError& e) {
      throw NumericalError("block" + std::to_string(b + 1) + "/" + e.what());
    }
    PoolResult<T> pooled = maxpool2x2(out);
    if (tape) {
      tape->pool_input_shapes.push_back(out.shape());
      tape->pool_argmax.push_back(std::move(pooled.argmax));
    }
    current = std::move(pooled.output);
  }

  const std::size_t batch = current.dim(0);
  const Shape pooled_shape = current.shape();
  Tensor<T> flat = std::move(current).reshaped({batch, flatten_extent(spec_)});

  const std::size_t h = head_slot_;
  Tensor<T> a1 = relu(matmul_bias(flat, params.value(h), params.value(h + 1)));
  DropoutResult<T> d1 = maybe_dropout(a1, options);
  Tensor<T> a2 = relu(matmul_bias(d1.output, params.value(h + 2), params.value(h + 3)));
  DropoutResult<T> d2 = maybe_dropout(a2, options);
  Tensor<T> logits = matmul_bias(d2.output, params.value(h + 4), params.value(h + 5));

  if (tape) {
    tape->flatten_shape = pooled_shape;
    tape->fc1 = DenseTape<T>{std::move(flat), std::move(a1), std::move(d1.mask)};
    tape->fc2 = DenseTape<T>{std::move(d1.output), std::move(a2), std::move(d2.mask)};
    tape->logits_input = std::move(d2.output);
  }
  return logits;
}

template <typename T>
Tensor<T> Network<T>::infer(const ParameterStore<T>& params, const Tensor<T>& input,
                            const std::vector<BranchMask>& masks) const {
  ForwardOptions options;
  options.mode = Mode::Infer;
  options.masks = masks;
  // Infer mode reads running statistics and never writes them.
  return forward(const_cast<ParameterStore<T>&>(params), input, options);
}

template <typename T>
std::optional<Tensor<T>> Network<T>::backward(const ParameterStore<T>& params, const Tape<T>& tape,
                                              const Tensor<T>& grad_logits, Gradients<T>& grads,
                                              bool need_input_grad) const {
  check_store(params);
  grads.values.assign(params.size(), std::nullopt);
  const std::size_t h = head_slot_;
  auto trainable = [&](std::size_t i) { return params.trainable(i); };

  bool any_block_trainable = false;
  for (std::size_t i = 0; i < h; ++i) any_block_trainable = any_block_trainable || trainable(i);
  const bool need_below_fc1 = need_input_grad || any_block_trainable;
  const bool need_below_fc2 = need_below_fc1 || trainable(h) || trainable(h + 1);
  const bool need_below_logits = need_below_fc2 || trainable(h + 2) || trainable(h + 3);

  auto store = [&](std::size_t slot, Tensor<T>& g) {
    if (trainable(slot)) grads.values[slot] = std::move(g);
  };

  auto dense_back = [&](const Tensor<T>& input, std::size_t slot, const Tensor<T>& g, bool need_in) {
    const bool need_params = trainable(slot) || trainable(slot + 1);
    DenseGrads<T> dg = matmul_bias_backward(input, params.value(slot), g, need_in, need_params);
    if (need_params) {
      store(slot, dg.weights);
      store(slot + 1, dg.bias);
    }
    return std::move(dg.input);
  };

  std::optional<Tensor<T>> result;
  if (need_below_logits) {
    Tensor<T> g = dense_back(tape.logits_input, h + 4, grad_logits, true);
    g = relu_backward(tape.fc2.activated, dropout_backward(tape.fc2.dropout_mask, g));
    g = dense_back(tape.fc2.input, h + 2, g, need_below_fc2);
    if (need_below_fc2) {
      g = relu_backward(tape.fc1.activated, dropout_backward(tape.fc1.dropout_mask, g));
      g = dense_back(tape.fc1.input, h, g, need_below_fc1);
      if (need_below_fc1) {
        g.reshape(tape.flatten_shape);
        for (std::size_t b = tape.blocks.size(); b-- > 0;) {
          Tensor<T> g_block = maxpool2x2_backward(tape.pool_input_shapes[b], tape.pool_argmax[b], g);
          bool need_in = need_input_grad;
          for (std::size_t i = 0; i < unit_slots_[b][0][0] && !need_in; ++i) need_in = trainable(i);
          const auto& slots = unit_slots_[b];
          auto unit_trainable = [&](std::size_t n, std::size_t u) {
            const std::size_t s = slots[n][u];
            return trainable(s) || trainable(s + 1) || trainable(s + 2) || trainable(s + 3);
          };
          const BlockParams<T> bp = block_params(const_cast<ParameterStore<T>&>(params), b);
          BlockGrads<T> bg = block_backward(bp, tape.block_inputs[b], tape.blocks[b], g_block, need_in,
                                            std::function<bool(std::size_t, std::size_t)>(unit_trainable));
          for (std::size_t n = 0; n < bg.units.size(); ++n) {
            for (std::size_t u = 0; u < bg.units[n].size(); ++u) {
              auto& ug = bg.units[n][u];
              if (!ug) continue;
              const std::size_t s = slots[n][u];
              store(s, ug->conv_weights);
              store(s + 1, ug->conv_bias);
              store(s + 2, ug->gamma);
              store(s + 3, ug->beta);
            }
          }
          if (!need_in) break;
          g = std::move(bg.input);
          if (b == 0 && need_input_grad) result = std::move(g);
        }
      }
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (trainable(i) && !grads.values[i]) grads.values[i] = Tensor<T>(params.value(i).shape());
  }
  return result;
}

template <typename T>
Subnet<T>::Subnet(const Network<T>& net, const ParameterStore<T>& params, PathSet paths)
    : net_(&net), params_(&params), paths_(std::move(paths)) {
  paths_.check_against(net.spec().scale());
  masks_.assign(net.spec().blocks.size(), paths_.mask(net.spec().scale()));
}

template <typename T>
Tensor<T> Subnet<T>::forward(const Tensor<T>& input) const {
  return net_->infer(*params_, input, masks_);
}

template <typename T>
std::vector<int> predict_classes(const Tensor<T>& logits) {
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<int> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = logits.raw() + b * classes;
    std::size_t best = 0;
    for (std::size_t k = 1; k < classes; ++k) {
      if (row[k] > row[best]) best = k;
    }
    out[b] = static_cast<int>(best);
  }
  return out;
}

#define CRESCENDO_INSTANTIATE_NETWORK(T)                                                                      \
  template Tensor<T> block_forward<T>(const BlockParams<T>&, const Tensor<T>&, const BranchMask&, Mode,       \
                                      const BatchNormOptions&, BlockTape<T>*);                                \
  template BlockGrads<T> block_backward<T>(const BlockParams<T>&, const Tensor<T>&, const BlockTape<T>&,      \
                                           const Tensor<T>&, bool,                                            \
                                           const std::function<bool(std::size_t, std::size_t)>&);             \
  template struct Tape<T>;                                                                                    \
  template class Network<T>;                                                                                  \
  template class Subnet<T>;                                                                                   \
  template std::vector<int> predict_classes<T>(const Tensor<T>&);

CRESCENDO_INSTANTIATE_NETWORK(float)
CRESCENDO_INSTANTIATE_NETWORK(double)

}  // namespace crescendo
