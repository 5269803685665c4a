#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "crescendo/arch.hpp"
#include "crescendo/trainer.hpp"

namespace crescendo {

enum class DatasetKind { Cifar10, Cifar100, Synthetic };

DatasetKind parse_dataset_kind(std::string_view text);
std::string_view dataset_kind_name(DatasetKind kind);

/// Architecture, data and training settings of one run.
struct RunConfig {
  int scale = 0;
  int interval = 0;
  std::vector<int> block_widths;
  WidthMode width_mode = WidthMode::EqualWithinBlock;
  int classes = 10;

  DatasetKind dataset = DatasetKind::Cifar10;
  std::size_t train_subset = 0;  // 0 keeps every record (synthetic: 1000)
  std::size_t test_subset = 0;   // 0 keeps every record (synthetic: 200)
  SyntheticOptions synthetic;

  TrainConfig train;

  NetworkSpec network_spec() const;
};

/// key = value lines; '#' starts a comment. Required keys: scale, interval,
/// block_widths, classes. Throws ConfigError naming the key and line.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Canonical key = value text; parse_config(config_echo(c)) reproduces c.
std::string config_echo(const RunConfig& config);

/// Shortest text that parses back to the same double.
std::string format_double(double value);
std::string format_float(float value);

}  // namespace crescendo
