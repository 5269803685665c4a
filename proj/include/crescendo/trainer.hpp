#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crescendo/data.hpp"
#include "crescendo/network.hpp"
#include "crescendo/optim.hpp"
#include "crescendo/regularization.hpp"

namespace crescendo {

struct InitConfig {
  double conv_stddev = 0.05;
  double fc_stddev = 0.04;
  double truncation = 2.0;  // resample draws beyond this many standard deviations
};

/// Draw from N(0, stddev^2) conditioned on |x| <= truncation * stddev.
double truncated_normal(Rng& rng, double stddev, double truncation);

/// Conv and FC weights from truncated normals, biases 0, BN gamma 1 and
/// beta 0, running mean 0 and variance 1. Every learnable entry trainable.
template <typename T>
ParameterStore<T> init_params(const ParameterPlan& plan, const InitConfig& config, Rng& rng);

enum class OptimizerKind { Adam, Nesterov };

OptimizerKind parse_optimizer(std::string_view text);
std::string_view optimizer_name(OptimizerKind kind);

struct TrainConfig {
  std::size_t batch_size = 128;
  int epochs = 1;
  OptimizerKind optimizer = OptimizerKind::Adam;
  AdamConfig adam;
  NesterovConfig nesterov;
  std::optional<double> learning_rate;  // constant Nesterov rate instead of the schedule
  ScheduleProfile schedule = ScheduleProfile::Cifar;
  double droppath_rate = 0.0;
  double dropout_rate = 0.0;
  double l2_lambda = 1e-4;
  std::uint64_t seed = 0;
  bool augment = true;
  bool pathwise = false;
  int pathwise_cycles = 2;
  std::vector<PathSet> eval_paths;  // tracked subnets; empty tracks the full network

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  int path = 0;  // path trained during the epoch; 0 for whole-network training
  double train_loss = 0.0;
  double train_error = 0.0;        // percent, on the augmented training batches
  std::vector<double> eval_error;  // percent, one per tracked path set
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<PathSet> tracked;
  std::vector<EpochRecord> epochs;
};

using EpochObserver = std::function<void(const EpochRecord&, const ParameterStore<float>&)>;

/// Whole-network training: every branch is trainable, drop-path masks are
/// drawn per block and step. test may be null, which leaves eval_error empty.
TrainHistory train_whole(const Network<float>& net, ParameterStore<float>& params, const Dataset& train,
                         const Dataset* test, const TrainConfig& config, const EpochObserver& on_epoch = {});

/// Path-wise training: phases visit paths 1..S in order, repeated for
/// pathwise_cycles cycles. Only the active path's branch parameters and the
/// dense head are trainable; the forward pass uses every branch.
TrainHistory train_pathwise(const Network<float>& net, ParameterStore<float>& params, const Dataset& train,
                            const Dataset* test, const TrainConfig& config, const EpochObserver& on_epoch = {});

/// Dispatches on config.pathwise.
TrainHistory train(const Network<float>& net, ParameterStore<float>& params, const Dataset& train,
                   const Dataset* test, const TrainConfig& config, const EpochObserver& on_epoch = {});

/// Path (1-based) trained at epoch: phase floor(epoch * cycles * S / epochs), path phase % S + 1.
int pathwise_path(int epoch, int epochs, int scale, int cycles);

/// Branch-k parameters of every block and the dense head trainable, every other branch frozen.
void apply_path_freeze(const Network<float>& net, ParameterStore<float>& params, int path);

/// Learning rate used at epoch.
double epoch_learning_rate(const TrainConfig& config, int epoch);

/// Percent of items whose Infer-mode prediction with only paths active is wrong.
double evaluate_error(const Network<float>& net, const ParameterStore<float>& params, const Dataset& data,
                      const PathSet& paths, std::size_t batch_size = 128);

/// Images standardized and stacked into [B, 3, 32, 32], with their labels.
struct Batch {
  Tensor<float> input;
  std::vector<int> labels;
};
Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const Rng* augment_rng = nullptr,
                 std::uint64_t epoch = 0);

enum class MemoryMode { Whole, Path, Amortized };

/// Trainable branch units in the mode over all branch units. path is used
/// by MemoryMode::Path only.
double estimate_training_memory(const NetworkSpec& spec, MemoryMode mode, int path = 0);

}  // namespace crescendo
