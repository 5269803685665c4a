#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "crescendo/tensor.hpp"

namespace crescendo {

/// How feature-map counts are laid out inside a block.
///  - EqualGlobal / EqualWithinBlock: first unit maps in -> out, the rest out -> out.
///    (The two differ only in the block widths the caller chooses.)
///  - IncreasingWithinBranch: unit widths follow width_schedule along each branch.
enum class WidthMode { EqualGlobal, EqualWithinBlock, IncreasingWithinBranch };

std::string_view width_mode_name(WidthMode mode);
WidthMode parse_width_mode(std::string_view text);

struct BlockSpec {
  int scale = 4;     // number of branches
  int interval = 1;  // depth step between adjacent branches
  int in_channels = 3;
  int out_channels = 128;
  WidthMode width_mode = WidthMode::EqualWithinBlock;
};

struct UnitShape {
  int in_channels;
  int out_channels;

  friend bool operator==(const UnitShape&, const UnitShape&) = default;
};

struct BranchSpec {
  std::vector<UnitShape> units;
};

/// Stacked blocks, each followed by a 2x2 max-pool, then
/// FC(fc1) -> ReLU -> dropout -> FC(fc2) -> ReLU -> dropout -> FC(classes).
struct NetworkSpec {
  std::vector<BlockSpec> blocks;
  int in_channels = 3;
  int height = 32;
  int width = 32;
  int fc1 = 384;
  int fc2 = 192;
  int classes = 10;

  int scale() const { return blocks.front().scale; }
  int interval() const { return blocks.front().interval; }
};

/// Builds the uniform-(S, I) network: block k maps widths[k-1] -> widths[k],
/// block 1 reads the image channels.
NetworkSpec make_network_spec(int scale, int interval, const std::vector<int>& block_widths, WidthMode mode,
                              int classes);

/// Checks channel chaining, uniform (S, I), and that the input extent
/// survives one 2x2 pool per block. Throws StructuralError / UsageError.
void validate(const NetworkSpec& spec);

/// Feature-map count of layer i (1-based) of an n_layers branch:
/// in + i * (out - in) / n_layers, rounded half up. The last entry is out.
std::vector<int> width_schedule(int n_inmaps, int n_outmaps, int n_layers);

/// Branch n (1-based) of a block: n * interval units.
BranchSpec build_branch(const BlockSpec& block, int n);

/// Ordered, duplicate-free, nonempty set of 1-based branch indices applied
/// to every block.
class PathSet {
 public:
  explicit PathSet(std::vector<int> branches);

  static PathSet full(int scale);
  static PathSet single(int branch) { return PathSet({branch}); }
  /// "1,3" or "{1, 3}" -> {1, 3}. Throws UsageError on malformed text.
  static PathSet parse(std::string_view text);

  const std::vector<int>& branches() const noexcept { return branches_; }
  int longest() const noexcept { return branches_.back(); }
  bool contains(int branch) const;
  std::size_t count() const noexcept { return branches_.size(); }

  /// Throws UsageError when any index exceeds scale.
  void check_against(int scale) const;
  std::vector<bool> mask(int scale) const;

  /// "{1,3}"
  std::string to_string() const;

  friend bool operator==(const PathSet&, const PathSet&) = default;

 private:
  std::vector<int> branches_;
};

/// Every nonempty subset of {1..scale}, ordered by size then lexicographically.
std::vector<PathSet> all_path_sets(int scale);

/// Longest-path convolutions plus two hidden FC layers plus the classifier.
int network_depth(const NetworkSpec& spec);
int subnet_depth(const NetworkSpec& spec, const PathSet& paths);

/// Spatial extent after all pools times the last block's width.
std::size_t flatten_extent(const NetworkSpec& spec);

/// Learnable scalars of one conv unit: 3x3 weights, bias, BN gamma and beta.
std::uint64_t unit_parameter_count(const UnitShape& unit);

/// Learnable scalars: conv weights and biases, BN gamma and beta, FC
/// weights and biases. Running statistics are excluded.
std::uint64_t count_parameters(const NetworkSpec& spec);

struct BlockParameterCount {
  std::uint64_t total = 0;
  std::vector<std::uint64_t> per_branch;
};
std::vector<BlockParameterCount> count_block_parameters(const NetworkSpec& spec);

/// Number of conv units in the branches selected by paths, summed over blocks.
std::uint64_t branch_unit_count(const NetworkSpec& spec, const PathSet& paths);

}  // namespace crescendo
