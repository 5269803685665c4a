#include "crescendo/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>

#include "crescendo/parallel.hpp"

namespace crescendo {

double truncated_normal(Rng& rng, double stddev, double truncation) {
  if (!(stddev > 0.0) || !(truncation > 0.0)) throw UsageError("truncated normal needs positive stddev and bound");
  for (;;) {
    const double x = rng.normal();
    if (std::abs(x) <= truncation) return x * stddev;
  }
}

template <typename T>
ParameterStore<T> init_params(const ParameterPlan& plan, const InitConfig& config, Rng& rng) {
  ParameterStore<T> store;
  for (const ParamInfo& info : plan) {
    Tensor<T> value(info.shape);
    switch (info.role) {
      case ParamRole::ConvWeight:
        for (auto& v : value.data()) v = static_cast<T>(truncated_normal(rng, config.conv_stddev, config.truncation));
        break;
      case ParamRole::FcWeight:
        for (auto& v : value.data()) v = static_cast<T>(truncated_normal(rng, config.fc_stddev, config.truncation));
        break;
      case ParamRole::BnGamma:
      case ParamRole::BnRunningVar: value.fill(T{1}); break;
      default: break;
    }
    store.add(info, std::move(value), true);
  }
  return store;
}

template ParameterStore<float> init_params<float>(const ParameterPlan&, const InitConfig&, Rng&);
template ParameterStore<double> init_params<double>(const ParameterPlan&, const InitConfig&, Rng&);

OptimizerKind parse_optimizer(std::string_view text) {
  if (text == "adam") return OptimizerKind::Adam;
  if (text == "nesterov") return OptimizerKind::Nesterov;
  throw UsageError("unknown optimizer '" + std::string(text) + "' (expected adam or nesterov)");
}

std::string_view optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "nesterov"; }

void TrainConfig::validate() const {
  if (batch_size < 1) throw UsageError("batch size must be at least 1");
  if (epochs < 1) throw UsageError("epochs must be at least 1");
  if (pathwise_cycles < 1) throw UsageError("path-wise cycles must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw UsageError("dropout rate must lie in [0, 1)");
  if (!(droppath_rate >= 0.0 && droppath_rate < 1.0)) throw UsageError("drop-path rate must lie in [0, 1)");
  if (l2_lambda < 0.0) throw UsageError("l2 lambda must be nonnegative");
  if (learning_rate && !(*learning_rate > 0.0)) throw UsageError("learning rate must be positive");
}

int pathwise_path(int epoch, int epochs, int scale, int cycles) {
  if (epochs < 1 || scale < 1 || cycles < 1) throw UsageError("path-wise schedule needs positive sizes");
  if (epoch < 0 || epoch >= epochs) throw UsageError("epoch outside the run");
  const long long phases = static_cast<long long>(cycles) * scale;
  const long long phase = static_cast<long long>(epoch) * phases / epochs;
  return static_cast<int>(phase % scale) + 1;
}

void apply_path_freeze(const Network<float>& net, ParameterStore<float>& params, int path) {
  if (path < 1 || path > net.spec().scale()) throw UsageError("path " + std::to_string(path) + " outside the network");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamInfo& info = params.entry(i).info;
    params.set_trainable(i, info.branch == 0 || info.branch == path);
  }
}

double epoch_learning_rate(const TrainConfig& config, int epoch) {
  if (config.optimizer == OptimizerKind::Adam) return config.adam.learning_rate;
  if (config.learning_rate) return *config.learning_rate;
  return scaled_lr_schedule(epoch, config.epochs, config.schedule);
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const Rng* augment_rng,
                 std::uint64_t epoch) {
  Batch batch{Tensor<float>({indices.size(), kImageChannels, kImageSide, kImageSide}),
              std::vector<int>(indices.size())};
  parallel_for(indices.size(), [&](std::size_t b) {
    const LabeledImage& item = data.items.at(indices[b]);
    LabeledImage image;
    if (augment_rng) {
      Rng rng = augment_rng->fork(epoch, indices[b]);
      image = standardize(augment(item, rng));
    } else {
      image = standardize(item);
    }
    std::memcpy(batch.input.raw() + b * kImagePixels, image.pixels.raw(), kImagePixels * sizeof(float));
    batch.labels[b] = image.label;
  });
  return batch;
}

double evaluate_error(const Network<float>& net, const ParameterStore<float>& params, const Dataset& data,
                      const PathSet& paths, std::size_t batch_size) {
  if (data.size() == 0) throw UsageError("cannot evaluate on an empty dataset");
  if (batch_size < 1) throw UsageError("batch size must be at least 1");
  const Subnet<float> sub(net, params, paths);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, order.size() - start);
    const Batch batch = make_batch(data, std::span(order).subspan(start, count));
    const std::vector<int> predicted = predict_classes(sub.forward(batch.input));
    for (std::size_t b = 0; b < count; ++b) wrong += predicted[b] != batch.labels[b];
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(data.size());
}

namespace {

void check_inputs(const Network<float>& net, const ParameterStore<float>& params, const Dataset& train,
                  const Dataset* test, const TrainConfig& config) {
  config.validate();
  net.check_store(params);
  if (train.size() == 0) throw UsageError("training set is empty");
  if (test && test->size() == 0) throw UsageError("test set is empty");
  for (const PathSet& p : config.eval_paths) p.check_against(net.spec().scale());
}

struct StepResult {
  double loss;
  std::size_t wrong;
};

StepResult train_step(const Network<float>& net, ParameterStore<float>& params, OptimizerState<float>& state,
                      const Batch& batch, const TrainConfig& config, double learning_rate, Rng& droppath_rng,
                      Rng& dropout_rng) {
  const int scale = net.spec().scale();
  ForwardOptions options;
  options.mode = Mode::Train;
  options.dropout_rate = config.dropout_rate;
  options.dropout_rng = &dropout_rng;
  for (std::size_t b = 0; b < net.spec().blocks.size(); ++b) {
    options.masks.push_back(sample_drop_mask(scale, DropPathConfig{config.droppath_rate}, droppath_rng));
  }

  std::optional<NesterovLookahead<float>> lookahead;
  if (config.optimizer == OptimizerKind::Nesterov) lookahead.emplace(params, state, config.nesterov);

  Tape<float> tape;
  const Tensor<float> logits = net.forward(params, batch.input, options, &tape);
  const LossResult<float> loss = softmax_cross_entropy(logits, std::span<const int>(batch.labels));
  L2Result<float> l2 = l2_penalty(params, config.l2_lambda);
  const double total = static_cast<double>(loss.loss) + static_cast<double>(l2.penalty);
  if (!std::isfinite(total)) {
    const auto where = tape.first_non_finite();
    throw NumericalError("non-finite training loss; first non-finite tensor: " +
                         (where ? *where : std::string(std::isfinite(loss.loss) ? "l2 penalty" : "loss")));
  }

  Gradients<float> grads(params.size());
  net.backward(params, tape, loss.grad, grads);
  for (auto& [slot, g] : l2.grads) {
    if (!params.trainable(slot)) continue;
    Tensor<float>& dst = *grads.values[slot];
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += g[j];
  }
  if (lookahead) lookahead->restore();

  if (config.optimizer == OptimizerKind::Adam) {
    adam_step(params, grads, state, config.adam);
  } else {
    nesterov_step(params, grads, state, config.nesterov, learning_rate);
  }

  const std::vector<int> predicted = predict_classes(logits);
  std::size_t wrong = 0;
  for (std::size_t b = 0; b < predicted.size(); ++b) wrong += predicted[b] != batch.labels[b];
  return {total, wrong};
}

TrainHistory run(const Network<float>& net, ParameterStore<float>& params, const Dataset& train,
                 const Dataset* test, const TrainConfig& config, bool pathwise, const EpochObserver& on_epoch) {
  check_inputs(net, params, train, test, config);
  const int scale = net.spec().scale();

  TrainHistory history;
  history.tracked = config.eval_paths.empty() ? std::vector<PathSet>{PathSet::full(scale)} : config.eval_paths;

  const Rng shuffle_base(config.seed, Stream::Shuffle);
  const Rng augment_base(config.seed, Stream::Augment);
  const Rng droppath_base(config.seed, Stream::DropPath);
  const Rng dropout_base(config.seed, Stream::Dropout);

  OptimizerState<float> state;
  if (!pathwise) params.set_all_trainable(true);
  int active_path = 0;

  std::vector<std::size_t> order(train.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    if (pathwise) {
      const int path = pathwise_path(epoch, config.epochs, scale, config.pathwise_cycles);
      if (path != active_path) {
        apply_path_freeze(net, params, path);
        state.reset();
        active_path = path;
      }
    }
    const double learning_rate = epoch_learning_rate(config, epoch);

    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle = shuffle_base.fork(static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle);

    double loss_sum = 0.0;
    std::size_t wrong = 0;
    std::uint64_t step = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++step) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      const Batch batch = make_batch(train, std::span(order).subspan(start, count),
                                     config.augment ? &augment_base : nullptr, static_cast<std::uint64_t>(epoch));
      Rng droppath = droppath_base.fork(static_cast<std::uint64_t>(epoch), step);
      Rng dropout = dropout_base.fork(static_cast<std::uint64_t>(epoch), step);
      const StepResult r = train_step(net, params, state, batch, config, learning_rate, droppath, dropout);
      loss_sum += r.loss * static_cast<double>(count);
      wrong += r.wrong;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.path = active_path;
    record.train_loss = loss_sum / static_cast<double>(train.size());
    record.train_error = 100.0 * static_cast<double>(wrong) / static_cast<double>(train.size());
    record.learning_rate = learning_rate;
    if (test) {
      for (const PathSet& p : history.tracked) record.eval_error.push_back(evaluate_error(net, params, *test, p));
    }
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    history.epochs.push_back(record);
    if (on_epoch) on_epoch(history.epochs.back(), params);
  }
  if (pathwise) params.set_all_trainable(true);
  return history;
}

}  // namespace

TrainHistory train_whole(const Network<float>& net, ParameterStore<float>& params, const Dataset& train,
                         const Dataset* test, const TrainConfig& config, const EpochObserver& on_epoch) {
  return run(net, params, train, test, config, false, on_epoch);
}

TrainHistory train_pathwise(const Network<float>& net, ParameterStore<float>& params, const Dataset& train,
                            const Dataset* test, const TrainConfig& config, const EpochObserver& on_epoch) {
  return run(net, params, train, test, config, true, on_epoch);
}

TrainHistory train(const Network<float>& net, ParameterStore<float>& params, const Dataset& train,
                   const Dataset* test, const TrainConfig& config, const EpochObserver& on_epoch) {
  return run(net, params, train, test, config, config.pathwise, on_epoch);
}

double estimate_training_memory(const NetworkSpec& spec, MemoryMode mode, int path) {
  const int scale = spec.scale();
  const double total = static_cast<double>(branch_unit_count(spec, PathSet::full(scale)));
  switch (mode) {
    case MemoryMode::Whole: return 1.0;
    case MemoryMode::Path: {
      if (path < 1 || path > scale) throw UsageError("path " + std::to_string(path) + " outside the network");
      return static_cast<double>(branch_unit_count(spec, PathSet::single(path))) / total;
    }
    case MemoryMode::Amortized: {
      double sum = 0.0;
      for (int k = 1; k <= scale; ++k) sum += static_cast<double>(branch_unit_count(spec, PathSet::single(k)));
      return sum / scale / total;
    }
  }
  return 1.0;
}

}  // namespace crescendo
