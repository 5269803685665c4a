#include "crescendo/arch.hpp"

#include <algorithm>
#include <charconv>

#include "crescendo/error.hpp"

namespace crescendo {

std::string_view width_mode_name(WidthMode mode) {
  switch (mode) {
    case WidthMode::EqualGlobal: return "equal_global";
    case WidthMode::EqualWithinBlock: return "equal_within_block";
    case WidthMode::IncreasingWithinBranch: return "increasing";
  }
  return "unknown";
}

WidthMode parse_width_mode(std::string_view text) {
  for (WidthMode mode :
       {WidthMode::EqualGlobal, WidthMode::EqualWithinBlock, WidthMode::IncreasingWithinBranch}) {
    if (text == width_mode_name(mode)) return mode;
  }
  throw UsageError("unknown width mode '" + std::string(text) +
                   "' (expected equal_global, equal_within_block or increasing)");
}

NetworkSpec make_network_spec(int scale, int interval, const std::vector<int>& block_widths, WidthMode mode,
                              int classes) {
  if (block_widths.empty()) throw UsageError("a network needs at least one block");
  NetworkSpec spec;
  spec.classes = classes;
  int in = spec.in_channels;
  for (int width : block_widths) {
    spec.blocks.push_back(BlockSpec{scale, interval, in, width, mode});
    in = width;
  }
  validate(spec);
  return spec;
}

void validate(const NetworkSpec& spec) {
  if (spec.blocks.empty()) throw UsageError("a network needs at least one block");
  if (spec.classes < 2) throw UsageError("class count must be at least 2");
  if (spec.fc1 < 1 || spec.fc2 < 1) throw UsageError("fully connected extents must be positive");
  if (spec.in_channels < 1) throw UsageError("input channels must be positive");
  int in = spec.in_channels;
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
    const BlockSpec& block = spec.blocks[b];
    if (block.scale < 1 || block.interval < 1) throw UsageError("scale and interval must be positive");
    if (block.out_channels < 1) throw UsageError("block widths must be positive");
    if (block.scale != spec.blocks.front().scale || block.interval != spec.blocks.front().interval) {
      throw UsageError("all blocks must share the same scale and interval");
    }
    if (block.in_channels != in) {
      throw StructuralError("block " + std::to_string(b + 1) + " reads " + std::to_string(block.in_channels) +
                            " channels but receives " + std::to_string(in));
    }
    in = block.out_channels;
  }
  const int divisor = 1 << spec.blocks.size();
  if (spec.height < 1 || spec.width < 1 || spec.height % divisor != 0 || spec.width % divisor != 0) {
    throw StructuralError("input extent " + std::to_string(spec.height) + "x" + std::to_string(spec.width) +
                          " is not divisible by 2^" + std::to_string(spec.blocks.size()) + " pools");
  }
}

std::vector<int> width_schedule(int n_inmaps, int n_outmaps, int n_layers) {
  if (n_layers <= 0) throw UsageError("width_schedule needs at least one layer");
  if (n_inmaps <= 0 || n_outmaps <= 0) throw UsageError("width_schedule needs positive map counts");
  std::vector<int> widths;
  widths.reserve(static_cast<std::size_t>(n_layers));
  const long long n = n_layers;
  for (long long i = 1; i <= n; ++i) {
    // (in * n + i * (out - in)) / n, rounded half up, in exact integer arithmetic.
    const long long num = static_cast<long long>(n_inmaps) * n + i * (n_outmaps - n_inmaps);
    const long long twice = 2 * num + n;
    const long long den = 2 * n;
    long long q = twice / den;
    if (twice % den != 0 && twice < 0) --q;
    widths.push_back(static_cast<int>(q));
  }
  return widths;
}

BranchSpec build_branch(const BlockSpec& block, int n) {
  if (n < 1 || n > block.scale) {
    throw UsageError("branch index " + std::to_string(n) + " outside [1, " + std::to_string(block.scale) + "]");
  }
  const int length = n * block.interval;
  BranchSpec branch;
  branch.units.reserve(static_cast<std::size_t>(length));
  if (block.width_mode == WidthMode::IncreasingWithinBranch) {
    int in = block.in_channels;
    for (int out : width_schedule(block.in_channels, block.out_channels, length)) {
      branch.units.push_back({in, out});
      in = out;
    }
  } else {
    branch.units.push_back({block.in_channels, block.out_channels});
    for (int k = 1; k < length; ++k) branch.units.push_back({block.out_channels, block.out_channels});
  }
  return branch;
}

PathSet::PathSet(std::vector<int> branches) : branches_(std::move(branches)) {
  if (branches_.empty()) throw UsageError("a path set must contain at least one branch");
  std::sort(branches_.begin(), branches_.end());
  if (std::adjacent_find(branches_.begin(), branches_.end()) != branches_.end()) {
    throw UsageError("path set lists a branch twice");
  }
  if (branches_.front() < 1) throw UsageError("branch indices start at 1");
}

PathSet PathSet::full(int scale) {
  std::vector<int> all(static_cast<std::size_t>(scale));
  for (int i = 0; i < scale; ++i) all[static_cast<std::size_t>(i)] = i + 1;
  return PathSet(std::move(all));
}

PathSet PathSet::parse(std::string_view text) {
  std::vector<int> values;
  std::size_t i = 0;
  auto skip = [&] {
    while (i < text.size() && (text[i] == ' ' || text[i] == '{' || text[i] == '}' || text[i] == '\t')) ++i;
  };
  skip();
  while (i < text.size()) {
    int value = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + i, text.data() + text.size(), value);
    if (ec != std::errc{}) throw UsageError("malformed path set '" + std::string(text) + "'");
    values.push_back(value);
    i = static_cast<std::size_t>(ptr - text.data());
    skip();
    if (i < text.size()) {
      if (text[i] != ',' && text[i] != ';' && text[i] != '+') {
        throw UsageError("malformed path set '" + std::string(text) + "'");
      }
      ++i;
      skip();
      if (i == text.size()) throw UsageError("malformed path set '" + std::string(text) + "'");
    }
  }
  return PathSet(std::move(values));
}

bool PathSet::contains(int branch) const {
  return std::binary_search(branches_.begin(), branches_.end(), branch);
}

void PathSet::check_against(int scale) const {
  if (longest() > scale) {
    throw UsageError("path set " + to_string() + " names a branch beyond scale " + std::to_string(scale));
  }
}

std::vector<bool> PathSet::mask(int scale) const {
  check_against(scale);
  std::vector<bool> m(static_cast<std::size_t>(scale), false);
  for (int b : branches_) m[static_cast<std::size_t>(b - 1)] = true;
  return m;
}

std::string PathSet::to_string() const {
  std::string out = "{";
  for (std::size_t i = 0; i < branches_.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(branches_[i]);
  }
  return out + "}";
}

std::vector<PathSet> all_path_sets(int scale) {
  std::vector<std::vector<int>> subsets;
  for (unsigned bits = 1; bits < (1u << scale); ++bits) {
    std::vector<int> s;
    for (int b = 0; b < scale; ++b) {
      if (bits & (1u << b)) s.push_back(b + 1);
    }
    subsets.push_back(std::move(s));
  }
  std::sort(subsets.begin(), subsets.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  std::vector<PathSet> out;
  for (auto& s : subsets) out.emplace_back(std::move(s));
  return out;
}

int network_depth(const NetworkSpec& spec) { return subnet_depth(spec, PathSet::full(spec.scale())); }

int subnet_depth(const NetworkSpec& spec, const PathSet& paths) {
  paths.check_against(spec.scale());
  int depth = 0;
  for (const BlockSpec& block : spec.blocks) depth += paths.longest() * block.interval;
  return depth + 3;
}

std::size_t flatten_extent(const NetworkSpec& spec) {
  const std::size_t shrink = std::size_t{1} << spec.blocks.size();
  return static_cast<std::size_t>(spec.height) / shrink * (static_cast<std::size_t>(spec.width) / shrink) *
         static_cast<std::size_t>(spec.blocks.back().out_channels);
}

std::uint64_t unit_parameter_count(const UnitShape& unit) {
  const std::uint64_t in = static_cast<std::uint64_t>(unit.in_channels);
  const std::uint64_t out = static_cast<std::uint64_t>(unit.out_channels);
  return 9 * in * out + out + 2 * out;
}

std::vector<BlockParameterCount> count_block_parameters(const NetworkSpec& spec) {
  std::vector<BlockParameterCount> counts;
  for (const BlockSpec& block : spec.blocks) {
    BlockParameterCount c;
    for (int n = 1; n <= block.scale; ++n) {
      std::uint64_t branch_total = 0;
      for (const UnitShape& unit : build_branch(block, n).units) branch_total += unit_parameter_count(unit);
      c.per_branch.push_back(branch_total);
      c.total += branch_total;
    }
    counts.push_back(std::move(c));
  }
  return counts;
}

std::uint64_t count_parameters(const NetworkSpec& spec) {
  std::uint64_t total = 0;
  for (const auto& block : count_block_parameters(spec)) total += block.total;
  const std::uint64_t flat = flatten_extent(spec);
  const std::uint64_t fc1 = static_cast<std::uint64_t>(spec.fc1);
  const std::uint64_t fc2 = static_cast<std::uint64_t>(spec.fc2);
  const std::uint64_t classes = static_cast<std::uint64_t>(spec.classes);
  total += flat * fc1 + fc1;
  total += fc1 * fc2 + fc2;
  total += fc2 * classes + classes;
  return total;
}

std::uint64_t branch_unit_count(const NetworkSpec& spec, const PathSet& paths) {
  paths.check_against(spec.scale());
  std::uint64_t units = 0;
  for (const BlockSpec& block : spec.blocks) {
    for (int n : paths.branches()) units += static_cast<std::uint64_t>(n * block.interval);
  }
  return units;
}

}  // namespace crescendo
