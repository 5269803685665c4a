#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "crescendo/arch.hpp"
#include "crescendo/tensor.hpp"

namespace crescendo {

enum class ParamRole : std::uint8_t {
  ConvWeight,
  ConvBias,
  BnGamma,
  BnBeta,
  BnRunningMean,
  BnRunningVar,
  FcWeight,
  FcBias,
};

std::string_view role_name(ParamRole role);

/// Running statistics are state, not learnable parameters.
constexpr bool is_learnable(ParamRole role) {
  return role != ParamRole::BnRunningMean && role != ParamRole::BnRunningVar;
}

struct ParamInfo {
  std::string name;  // "block2/branch3/unit1/conv_w", "fc1/w", ...
  Shape shape;
  ParamRole role;
  int block = 0;   // 1-based; 0 for the dense head
  int branch = 0;  // 1-based; 0 for the dense head
  int unit = 0;    // 1-based; 0 for the dense head
};

using ParameterPlan = std::vector<ParamInfo>;

/// Slot order: for each block, branch and unit the six unit tensors
/// (conv_w, conv_b, bn_gamma, bn_beta, bn_mean, bn_var), then
/// fc1/w, fc1/b, fc2/w, fc2/b, logits/w, logits/b.
ParameterPlan make_parameter_plan(const NetworkSpec& spec);

inline constexpr std::size_t kUnitSlots = 6;
inline constexpr std::size_t kHeadSlots = 6;

/// Named flat parameter storage. Order is insertion order, which for a
/// network store is plan order. Only learnable entries can be trainable.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    ParamInfo info;
    Tensor<T> value;
    bool trainable;
  };

  std::size_t add(ParamInfo info, Tensor<T> value, bool trainable = true) {
    if (index_.contains(info.name)) throw UsageError("duplicate parameter name '" + info.name + "'");
    if (value.shape() != info.shape) {
      throw StructuralError("parameter '" + info.name + "' has shape " + shape_string(value.shape()) +
                            ", plan says " + shape_string(info.shape));
    }
    const bool learnable = is_learnable(info.role);
    index_.emplace(info.name, entries_.size());
    entries_.push_back(Entry{std::move(info), std::move(value), learnable && trainable});
    return entries_.size() - 1;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  Entry& entry(std::size_t i) { return entries_.at(i); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  Tensor<T>& value(std::size_t i) { return entries_[i].value; }
  const Tensor<T>& value(std::size_t i) const { return entries_[i].value; }
  bool trainable(std::size_t i) const { return entries_[i].trainable; }

  void set_trainable(std::size_t i, bool on) {
    entries_.at(i).trainable = on && is_learnable(entries_[i].info.role);
  }
  void set_all_trainable(bool on) {
    for (std::size_t i = 0; i < entries_.size(); ++i) set_trainable(i, on);
  }

  std::optional<std::size_t> find(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t index(const std::string& name) const {
    if (auto i = find(name)) return *i;
    throw UsageError("no parameter named '" + name + "'");
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Learnable scalar count, optionally restricted to trainable entries.
  std::uint64_t learnable_count(bool trainable_only = false) const {
    std::uint64_t n = 0;
    for (const auto& e : entries_) {
      if (is_learnable(e.info.role) && (!trainable_only || e.trainable)) n += e.value.size();
    }
    return n;
  }

  /// FNV-1a over names and raw value bytes of the selected entries.
  std::uint64_t fingerprint(const std::function<bool(const Entry&)>& select = {}) const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* bytes = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& e : entries_) {
      if (select && !select(e)) continue;
      mix(e.info.name.data(), e.info.name.size());
      mix(e.value.raw(), e.value.size() * sizeof(T));
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Gradients aligned with a store's entries; empty where none was computed.
template <typename T>
struct Gradients {
  std::vector<std::optional<Tensor<T>>> values;

  explicit Gradients(std::size_t n = 0) : values(n) {}
};

}  // namespace crescendo
