#include "crescendo/layers.hpp"

#include <cmath>

#include "crescendo/kernels.hpp"
#include "crescendo/parallel.hpp"

namespace crescendo {
namespace {

struct ChannelLayout {
  std::size_t batch;
  std::size_t channels;
  std::size_t spatial;
};

template <typename T>
ChannelLayout channel_layout(const Tensor<T>& x) {
  if (x.rank() != 4 && x.rank() != 2) {
    throw StructuralError("batch normalization expects a 2-D or 4-D tensor, got " + shape_string(x.shape()));
  }
  const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  return {x.dim(0), x.dim(1), spatial};
}

template <typename T>
void check_channel_extent(const Tensor<T>& t, std::size_t channels, const char* what) {
  if (t.size() != channels) {
    throw StructuralError(std::string("batch normalization ") + what + " has " + std::to_string(t.size()) +
                          " entries, input has " + std::to_string(channels) + " channels");
  }
}

}  // namespace

template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormParams<T> params, Mode mode,
                            const BatchNormOptions& options, BatchNormCache<T>* cache) {
  const auto [batch, channels, spatial] = channel_layout(x);
  check_channel_extent(params.gamma, channels, "gamma");
  check_channel_extent(params.beta, channels, "beta");
  check_channel_extent(params.running_mean, channels, "running mean");
  check_channel_extent(params.running_var, channels, "running variance");

  const std::size_t count = batch * spatial;
  if (mode == Mode::Train && count < 2) {
    throw UsageError("batch statistics need at least two values per channel, got " + std::to_string(count));
  }

  std::vector<T> mean(channels), inv_std(channels);
  Tensor<T> out(x.shape());
  const T* in = x.raw();
  T* dst = out.raw();
  std::vector<double> batch_var(channels, 0.0);

  parallel_for(channels, [&](std::size_t c) {
    double mu, var;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* row = in + (b * channels + c) * spatial;
        for (std::size_t p = 0; p < spatial; ++p) sum += row[p];
      }
      mu = sum / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* row = in + (b * channels + c) * spatial;
        for (std::size_t p = 0; p < spatial; ++p) {
          const double d = row[p] - mu;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(count);
      batch_var[c] = var;
    } else {
      mu = params.running_mean[c];
      var = params.running_var[c];
    }
    mean[c] = static_cast<T>(mu);
    inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + options.epsilon));
    const T g = params.gamma[c], be = params.beta[c], m = mean[c], s = inv_std[c];
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * spatial;
      for (std::size_t p = 0; p < spatial; ++p) dst[off + p] = (in[off + p] - m) * s * g + be;
    }
  });

  if (mode == Mode::Train) {
    for (std::size_t c = 0; c < channels; ++c) {
      if (!std::isfinite(batch_var[c])) {
        throw NumericalError("non-finite batch variance in channel " + std::to_string(c));
      }
    }
    if (options.update_running) {
      const double mom = options.momentum;
      for (std::size_t c = 0; c < channels; ++c) {
        params.running_mean[c] = static_cast<T>(mom * params.running_mean[c] + (1.0 - mom) * mean[c]);
        params.running_var[c] = static_cast<T>(mom * params.running_var[c] + (1.0 - mom) * batch_var[c]);
      }
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& x, const Tensor<T>& gamma, const BatchNormCache<T>& cache,
                                     const Tensor<T>& grad_output, bool need_params) {
  const auto [batch, channels, spatial] = channel_layout(x);
  if (grad_output.shape() != x.shape()) {
    throw StructuralError("batchnorm_backward: gradient shape " + shape_string(grad_output.shape()) +
                          " does not match input " + shape_string(x.shape()));
  }
  BatchNormGrads<T> grads{Tensor<T>(x.shape()), Tensor<T>({channels}), Tensor<T>({channels})};
  const double n = static_cast<double>(batch * spatial);
  const T* in = x.raw();
  const T* dy = grad_output.raw();
  T* dx = grads.input.raw();

  parallel_for(channels, [&](std::size_t c) {
    const T m = cache.mean[c], s = cache.inv_std[c], g = gamma[c];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t off = (b * channels + c) * spatial;
      for (std::size_t p = 0; p < spatial; ++p) {
        const double xhat = (in[off + p] - m) * s;
        sum_dy += dy[off + p];
        sum_dy_xhat += dy[off + p] * xhat;
      }
    }
    grads.beta[c] = static_cast<T>(sum_dy);
    grads.gamma[c] = static_cast<T>(sum_dy_xhat);
    if (cache.mode == Mode::Train) {
      const double scale = static_cast<double>(g) * s / n;
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t off = (b * channels + c) * spatial;
        for (std::size_t p = 0; p < spatial; ++p) {
          const double xhat = (in[off + p] - m) * s;
          dx[off + p] = static_cast<T>(scale * (n * dy[off + p] - sum_dy - xhat * sum_dy_xhat));
        }
      }
    } else {
      const T scale = g * s;
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t off = (b * channels + c) * spatial;
        for (std::size_t p = 0; p < spatial; ++p) dx[off + p] = dy[off + p] * scale;
      }
    }
  });
  if (!need_params) {
    grads.gamma = Tensor<T>();
    grads.beta = Tensor<T>();
  }
  return grads;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const T* in = x.raw();
  T* dst = out.raw();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = in[i] > T{0} ? in[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_output) {
  if (x.shape() != grad_output.shape()) throw StructuralError("relu_backward shape mismatch");
  Tensor<T> out(x.shape());
  const T* in = x.raw();
  const T* dy = grad_output.raw();
  T* dst = out.raw();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = in[i] > T{0} ? dy[i] : T{0};
  return out;
}

template <typename T>
DropoutResult<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw UsageError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::Infer || rate == 0.0) return {x, std::nullopt};
  Tensor<T> mask(x.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < rate ? T{0} : keep_scale;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  return {std::move(out), std::move(mask)};
}

template <typename T>
Tensor<T> dropout_backward(const std::optional<Tensor<T>>& mask, const Tensor<T>& grad_output) {
  if (!mask) return grad_output;
  if (mask->shape() != grad_output.shape()) throw StructuralError("dropout_backward shape mismatch");
  Tensor<T> out(grad_output.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = grad_output[i] * (*mask)[i];
  return out;
}

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw StructuralError("softmax_cross_entropy expects [B,K] logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw StructuralError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                          std::to_string(batch));
  }
  LossResult<T> result{T{0}, Tensor<T>(logits.shape())};
  double total = 0.0;
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw UsageError("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
    const T* z = logits.raw() + b * classes;
    T* g = result.grad.raw() + b * classes;
    double zmax = z[0];
    for (std::size_t k = 1; k < classes; ++k) zmax = std::max<double>(zmax, z[k]);
    double sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) sum += std::exp(z[k] - zmax);
    const double log_sum = std::log(sum);
    total += -(z[label] - zmax - log_sum);
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::exp(z[k] - zmax - log_sum);
      g[k] = static_cast<T>((p - (static_cast<std::size_t>(label) == k ? 1.0 : 0.0)) * inv_batch);
    }
  }
  result.loss = static_cast<T>(total * inv_batch);
  return result;
}

template <typename T>
Tensor<T> unit_forward(const Tensor<T>& z, UnitParams<T> params, Mode mode, const BatchNormOptions& options,
                       UnitCache<T>* cache) {
  Tensor<T> activated = relu(conv2d(z, params.conv_weights, params.conv_bias));
  BatchNormCache<T> bn_cache;
  Tensor<T> out = batchnorm_forward(activated, params.bn, mode, options, cache ? &bn_cache : nullptr);
  if (cache) {
    cache->activated = std::move(activated);
    cache->bn = std::move(bn_cache);
  }
  return out;
}

template <typename T>
UnitGrads<T> unit_backward(const Tensor<T>& z, UnitParams<T> params, const UnitCache<T>& cache,
                           const Tensor<T>& grad_output, bool need_input, bool need_params) {
  BatchNormGrads<T> bn = batchnorm_backward(cache.activated, params.bn.gamma, cache.bn, grad_output, need_params);
  Tensor<T> grad_conv = relu_backward(cache.activated, bn.input);
  Conv2dGrads<T> conv = conv2d_backward(z, params.conv_weights, grad_conv, need_input, need_params);
  return {std::move(conv.input), std::move(conv.weights), std::move(conv.bias), std::move(bn.gamma),
          std::move(bn.beta)};
}

template <typename T>
GradCheckReport grad_check(std::span<const GradCheckTarget<T>> targets, const std::function<T()>& objective,
                           T epsilon) {
  GradCheckReport report;
  for (const auto& target : targets) {
    if (target.analytic->shape() != target.value->shape()) {
      throw StructuralError("grad_check: analytic gradient for " + target.name + " has the wrong shape");
    }
    Tensor<T>& value = *target.value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (target.skip && target.skip(i)) continue;
      const T original = value[i];
      value[i] = original + epsilon;
      const double plus = objective();
      value[i] = original - epsilon;
      const double minus = objective();
      value[i] = original;
      const double numeric = (plus - minus) / (2.0 * static_cast<double>(epsilon));
      const double analytic = (*target.analytic)[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double err = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (report.worst.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst = target.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

#define CRESCENDO_INSTANTIATE_LAYERS(T)                                                                        \
  template Tensor<T> batchnorm_forward<T>(const Tensor<T>&, BatchNormParams<T>, Mode, const BatchNormOptions&, \
                                          BatchNormCache<T>*);                                                 \
  template BatchNormGrads<T> batchnorm_backward<T>(const Tensor<T>&, const Tensor<T>&, const BatchNormCache<T>&, \
                                                   const Tensor<T>&, bool);                                    \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                                 \
  template Tensor<T> relu_backward<T>(const Tensor<T>&, const Tensor<T>&);                                      \
  template DropoutResult<T> dropout<T>(const Tensor<T>&, double, Mode, Rng&);                                   \
  template Tensor<T> dropout_backward<T>(const std::optional<Tensor<T>>&, const Tensor<T>&);                    \
  template LossResult<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>);                      \
  template Tensor<T> unit_forward<T>(const Tensor<T>&, UnitParams<T>, Mode, const BatchNormOptions&,            \
                                     UnitCache<T>*);                                                            \
  template UnitGrads<T> unit_backward<T>(const Tensor<T>&, UnitParams<T>, const UnitCache<T>&, const Tensor<T>&, \
                                         bool, bool);                                                           \
  template GradCheckReport grad_check<T>(std::span<const GradCheckTarget<T>>, const std::function<T()>&, T);

CRESCENDO_INSTANTIATE_LAYERS(float)
CRESCENDO_INSTANTIATE_LAYERS(double)

}  // namespace crescendo
