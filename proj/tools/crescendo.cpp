#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "crescendo/checkpoint.hpp"
#include "crescendo/config.hpp"
#include "crescendo/history.hpp"
#include "crescendo/trainer.hpp"

#ifndef CRESCENDO_BUILD_ID
#define CRESCENDO_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using namespace crescendo;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kData = 3, kNumerical = 4 };

class DataError : public Error {
 public:
  using Error::Error;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

// One manifest per output directory. Each command appends an entry and
// takes ownership of the files it wrote.
void record_manifest(const fs::path& out, const std::string& command, const std::string& config,
                     std::optional<std::uint64_t> seed, const std::string& started,
                     const std::vector<std::string>& artifacts) {
  const fs::path path = out / "manifest.json";
  nlohmann::json manifest = {{"commands", nlohmann::json::array()}};
  if (fs::exists(path)) {
    std::ifstream in(path);
    manifest = nlohmann::json::parse(in, nullptr, false);
    if (manifest.is_discarded() || !manifest.contains("commands")) manifest = {{"commands", nlohmann::json::array()}};
  }
  for (auto& entry : manifest["commands"]) {
    auto& files = entry["artifacts"];
    nlohmann::json kept = nlohmann::json::array();
    for (const auto& f : files) {
      if (std::find(artifacts.begin(), artifacts.end(), f.get<std::string>()) == artifacts.end()) kept.push_back(f);
    }
    files = kept;
  }
  nlohmann::json entry = {{"command", command},
                          {"config", config},
                          {"build", CRESCENDO_BUILD_ID},
                          {"started", started},
                          {"output_dir", fs::absolute(out).string()},
                          {"artifacts", artifacts}};
  entry["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
  manifest["commands"].push_back(entry);
  std::ofstream o(path, std::ios::trunc);
  o << manifest.dump(2) << '\n';
}

fs::path resolve_data_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("CRESCENDO_CIFAR_DIR")) return env;
  throw DataError("CIFAR data needs --data-dir or CRESCENDO_CIFAR_DIR");
}

Dataset load_split(const RunConfig& config, const std::string& data_dir, Split split) {
  const std::size_t limit = split == Split::Train ? config.train_subset : config.test_subset;
  if (config.dataset == DatasetKind::Synthetic) {
    const std::size_t n = limit > 0 ? limit : (split == Split::Train ? 1000 : 200);
    return synthetic_dataset(n, config.classes, config.train.seed, split, config.synthetic);
  }
  const fs::path dir = resolve_data_dir(data_dir);
  if (!fs::is_directory(dir)) throw DataError("data directory " + dir.string() + " does not exist");
  Dataset data = load_cifar_dir(dir, config.classes, split, limit);
  if (data.size() == 0) throw DataError("no records loaded from " + dir.string());
  return data;
}

struct TrainOptions {
  std::string config;
  std::string data_dir;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::size_t> subset;
  std::vector<std::string> paths;
};

int cmd_train(const TrainOptions& opt, bool pathwise) {
  const std::string started = utc_now();
  RunConfig config = load_config(opt.config);
  if (opt.seed) config.train.seed = *opt.seed;
  if (opt.epochs) config.train.epochs = *opt.epochs;
  if (opt.subset) config.train_subset = *opt.subset;
  if (pathwise) config.train.pathwise = true;
  if (!opt.paths.empty()) {
    config.train.eval_paths.clear();
    for (const auto& p : opt.paths) {
      PathSet set = PathSet::parse(p);
      set.check_against(config.scale);
      config.train.eval_paths.push_back(std::move(set));
    }
  }
  const NetworkSpec spec = config.network_spec();
  const Dataset train = load_split(config, opt.data_dir, Split::Train);
  const Dataset test = load_split(config, opt.data_dir, Split::Test);

  const fs::path out = opt.out;
  fs::create_directories(out);
  const Network<float> net(spec);
  Rng init_rng(config.train.seed, Stream::Init);
  ParameterStore<float> params = init_params<float>(net.plan(), InitConfig{}, init_rng);

  std::cerr << (config.train.pathwise ? "path-wise" : "whole-network") << " training: " << train.size()
            << " train / " << test.size() << " test images, " << config.train.epochs << " epochs, "
            << count_parameters(spec) << " parameters\n";
  const TrainHistory history =
      crescendo::train(net, params, train, &test, config.train, [&](const EpochRecord& r, const auto&) {
        std::cerr << "epoch " << r.epoch;
        if (r.path) std::cerr << " path " << r.path;
        std::cerr << " loss " << format_double(r.train_loss) << " train_err " << format_double(r.train_error);
        for (std::size_t i = 0; i < r.eval_error.size(); ++i) std::cerr << " eval_err " << format_double(r.eval_error[i]);
        std::cerr << " (" << std::fixed << std::setprecision(1) << r.seconds << std::defaultfloat << " s)\n";
      });

  const std::string echo = config_echo(config);
  save_checkpoint(out / "checkpoint.bin", echo, params);
  write_csv(out / "history.csv", history_table(history));
  write_csv(out / "timing.csv", timing_table(history));
  record_manifest(out, pathwise ? "pathwise-train" : "train", echo, config.train.seed, started,
                  {"checkpoint.bin", "history.csv", "timing.csv"});
  return kOk;
}

struct EvalOptions {
  std::string checkpoint;
  std::string data_dir;
  std::string out;
  std::optional<std::size_t> subset;
  std::vector<std::string> paths;
};

int cmd_eval_subnets(const EvalOptions& opt) {
  const std::string started = utc_now();
  Checkpoint<float> ckpt = load_checkpoint<float>(opt.checkpoint);
  RunConfig config = parse_config(ckpt.config);
  if (opt.subset) config.test_subset = *opt.subset;
  const NetworkSpec spec = config.network_spec();
  const Network<float> net(spec);
  net.check_store(ckpt.params);

  std::vector<PathSet> sets;
  for (const auto& p : opt.paths) {
    PathSet set = PathSet::parse(p);
    set.check_against(spec.scale());
    sets.push_back(std::move(set));
  }
  if (sets.empty()) sets = all_path_sets(spec.scale());
  if (std::find(sets.begin(), sets.end(), PathSet::full(spec.scale())) == sets.end()) {
    sets.push_back(PathSet::full(spec.scale()));
  }

  const Dataset test = load_split(config, opt.data_dir, Split::Test);
  CsvTable table;
  table.header = {"P", "depth", "error"};
  for (const PathSet& p : sets) {
    const double error = evaluate_error(net, ckpt.params, test, p);
    table.rows.push_back({csv_path_label(p), std::to_string(subnet_depth(spec, p)), format_double(error)});
  }
  write_csv(std::cout, table);
  if (!opt.out.empty()) {
    fs::create_directories(opt.out);
    write_csv(fs::path(opt.out) / "subnets.csv", table);
    record_manifest(opt.out, "eval-subnets", ckpt.config, std::nullopt, started, {"subnets.csv"});
  }
  return kOk;
}

int cmd_count(const std::string& config_path) {
  const RunConfig config = load_config(config_path);
  const NetworkSpec spec = config.network_spec();
  std::cout << "depth " << network_depth(spec) << '\n';
  const auto blocks = count_block_parameters(spec);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    std::cout << "block" << b + 1 << " " << blocks[b].total;
    for (std::size_t n = 0; n < blocks[b].per_branch.size(); ++n) {
      std::cout << " branch" << n + 1 << "=" << blocks[b].per_branch[n];
    }
    std::cout << '\n';
  }
  std::cout << "parameters " << count_parameters(spec) << '\n';
  std::cout << "memory_whole " << format_double(estimate_training_memory(spec, MemoryMode::Whole)) << '\n';
  for (int k = 1; k <= spec.scale(); ++k) {
    std::cout << "memory_path" << k << " " << format_double(estimate_training_memory(spec, MemoryMode::Path, k))
              << '\n';
  }
  std::cout << "memory_amortized " << format_double(estimate_training_memory(spec, MemoryMode::Amortized)) << '\n';
  return kOk;
}

int cmd_curves(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<LabeledTable> tables;
  for (const auto& input : inputs) {
    if (input.find(',') != std::string::npos) throw UsageError("input path '" + input + "' contains a comma");
    tables.push_back({input, read_csv(fs::path(input))});
  }
  const CsvTable merged = merge_curves(tables);
  const fs::path path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_csv(path, merged);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Crescendo network training and analysis"};
  app.require_subcommand(1);

  TrainOptions train_opt;
  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--config", train_opt.config, "Run configuration (key = value)")->required();
    cmd->add_option("--data-dir", train_opt.data_dir, "Directory holding the CIFAR binary files");
    cmd->add_option("--out", train_opt.out, "Output directory")->required();
    cmd->add_option("--seed", train_opt.seed, "Override the config seed");
    cmd->add_option("--epochs", train_opt.epochs, "Override the config epoch count")->check(CLI::PositiveNumber);
    cmd->add_option("--subset", train_opt.subset, "Use the first N training images");
    cmd->add_option("--paths", train_opt.paths, "Path sets evaluated each epoch, e.g. \"1,3\" (repeatable)");
  };
  CLI::App* train = app.add_subcommand("train", "Train the whole network");
  add_train_flags(train);
  CLI::App* pathwise = app.add_subcommand("pathwise-train", "Train one path at a time (train with pathwise=true)");
  add_train_flags(pathwise);

  EvalOptions eval_opt;
  CLI::App* eval = app.add_subcommand("eval-subnets", "Test error of subnets of a trained checkpoint");
  eval->add_option("--checkpoint", eval_opt.checkpoint, "Checkpoint written by train")->required();
  eval->add_option("--data-dir", eval_opt.data_dir, "Directory holding the CIFAR binary files");
  eval->add_option("--out", eval_opt.out, "Output directory for subnets.csv");
  eval->add_option("--subset", eval_opt.subset, "Use the first N test images");
  eval->add_option("--paths", eval_opt.paths, "Path sets, e.g. \"1,3\" (repeatable; default every subset)");

  std::string count_config;
  CLI::App* count = app.add_subcommand("count", "Depth, parameter counts and training-memory ratios");
  count->add_option("--config", count_config, "Run configuration (key = value)")->required();

  std::vector<std::string> curve_inputs;
  std::string curve_out;
  CLI::App* curves = app.add_subcommand("curves", "Merge history CSVs into long format");
  curves->add_option("inputs", curve_inputs, "History CSV files")->required();
  curves->add_option("--out", curve_out, "Merged CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(train_opt, false);
    if (*pathwise) return cmd_train(train_opt, true);
    if (*eval) return cmd_eval_subnets(eval_opt);
    if (*count) return cmd_count(count_config);
    if (*curves) return cmd_curves(curve_inputs, curve_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const SchemaError& e) {
    std::cerr << "schema error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
