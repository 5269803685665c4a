#include "crescendo/kernels.hpp"

#include <Eigen/Core>

#include "crescendo/parallel.hpp"

namespace crescendo {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

constexpr std::size_t kKernel = 3;
constexpr std::size_t kTaps = kKernel * kKernel;

// cols[(c*9 + ky*3 + kx), y*W + x] = input[c, y+ky-1, x+kx-1], zero outside.
template <typename T>
void im2col(const T* image, std::size_t channels, std::size_t height, std::size_t width, T* cols) {
  const std::size_t plane = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = image + c * plane;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        T* dst = cols + ((c * kTaps) + ky * kKernel + kx) * plane;
        for (std::size_t y = 0; y < height; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          T* row = dst + y * width;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(row, row + width, T{0});
            continue;
          }
          const T* src_row = src + static_cast<std::size_t>(sy) * width;
          // x + kx - 1 must lie in [0, width)
          const std::size_t x_begin = kx == 0 ? 1 : 0;
          const std::size_t x_end = kx == 2 ? width - 1 : width;
          if (x_begin > 0) row[0] = T{0};
          if (x_end < width) row[width - 1] = T{0};
          for (std::size_t x = x_begin; x < x_end; ++x) row[x] = src_row[x + kx - 1];
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into the image gradient.
template <typename T>
void col2im(const T* cols, std::size_t channels, std::size_t height, std::size_t width, T* image) {
  const std::size_t plane = height * width;
  std::fill(image, image + channels * plane, T{0});
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = image + c * plane;
    for (std::size_t ky = 0; ky < kKernel; ++ky) {
      for (std::size_t kx = 0; kx < kKernel; ++kx) {
        const T* src = cols + ((c * kTaps) + ky * kKernel + kx) * plane;
        for (std::size_t y = 0; y < height; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
          const T* row = src + y * width;
          T* dst_row = dst + static_cast<std::size_t>(sy) * width;
          const std::size_t x_begin = kx == 0 ? 1 : 0;
          const std::size_t x_end = kx == 2 ? width - 1 : width;
          for (std::size_t x = x_begin; x < x_end; ++x) dst_row[x + kx - 1] += row[x];
        }
      }
    }
  }
}

template <typename T>
void check_conv_operands(const Tensor<T>& input, const Tensor<T>& weights) {
  if (input.rank() != 4) throw StructuralError("conv2d input must be 4-D, got " + shape_string(input.shape()));
  if (weights.rank() != 4 || weights.dim(2) != kKernel || weights.dim(3) != kKernel) {
    throw StructuralError("conv2d weights must be [Cout,Cin,3,3], got " + shape_string(weights.shape()));
  }
  if (weights.dim(1) != input.dim(1)) {
    throw StructuralError("conv2d channel mismatch: input has " + std::to_string(input.dim(1)) +
                          " channels, weights expect " + std::to_string(weights.dim(1)));
  }
}

}  // namespace

template <typename T>
Tensor<T> elementwise_average(std::span<const Tensor<T>* const> inputs) {
  if (inputs.empty()) throw UsageError("elementwise_average needs at least one input");
  const Shape& shape = inputs[0]->shape();
  for (std::size_t i = 1; i < inputs.size(); ++i) {
    if (inputs[i]->shape() != shape) {
      throw StructuralError("elementwise_average: input " + std::to_string(i) + " has shape " +
                            shape_string(inputs[i]->shape()) + ", expected " + shape_string(shape));
    }
  }
  if (inputs.size() == 1) return *inputs[0];
  Tensor<T> out = *inputs[0];
  T* acc = out.raw();
  for (std::size_t i = 1; i < inputs.size(); ++i) {
    const T* src = inputs[i]->raw();
    for (std::size_t j = 0; j < out.size(); ++j) acc[j] += src[j];
  }
  const T k = static_cast<T>(inputs.size());
  for (std::size_t j = 0; j < out.size(); ++j) acc[j] /= k;
  return out;
}

template <typename T>
Tensor<T> elementwise_average(const std::vector<Tensor<T>>& inputs) {
  std::vector<const Tensor<T>*> ptrs;
  ptrs.reserve(inputs.size());
  for (const auto& t : inputs) ptrs.push_back(&t);
  return elementwise_average<T>(std::span<const Tensor<T>* const>(ptrs));
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  check_conv_operands(input, weights);
  const std::size_t batch = input.dim(0), cin = input.dim(1), height = input.dim(2), width = input.dim(3);
  const std::size_t cout = weights.dim(0);
  if (bias.size() != cout) {
    throw StructuralError("conv2d bias has " + std::to_string(bias.size()) + " entries, expected " +
                          std::to_string(cout));
  }
  const std::size_t plane = height * width;
  const std::size_t taps = cin * kTaps;
  Tensor<T> out({batch, cout, height, width});
  ConstMatrixMap<T> w(weights.raw(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(taps));

  parallel_for(batch, [&](std::size_t b) {
    std::vector<T> cols(taps * plane);
    im2col(input.raw() + b * cin * plane, cin, height, width, cols.data());
    ConstMatrixMap<T> c(cols.data(), static_cast<Eigen::Index>(taps), static_cast<Eigen::Index>(plane));
    MatrixMap<T> y(out.raw() + b * cout * plane, static_cast<Eigen::Index>(cout),
                   static_cast<Eigen::Index>(plane));
    y.noalias() = w * c;
    for (std::size_t o = 0; o < cout; ++o) {
      T* row = y.data() + o * plane;
      const T bo = bias[o];
      for (std::size_t p = 0; p < plane; ++p) row[p] += bo;
    }
  });
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                               const Tensor<T>& grad_output, bool need_input, bool need_params) {
  check_conv_operands(input, weights);
  const std::size_t batch = input.dim(0), cin = input.dim(1), height = input.dim(2), width = input.dim(3);
  const std::size_t cout = weights.dim(0);
  const Shape expected{batch, cout, height, width};
  if (grad_output.shape() != expected) {
    throw StructuralError("conv2d_backward: gradient shape " + shape_string(grad_output.shape()) +
                          " does not match output shape " + shape_string(expected));
  }
  const std::size_t plane = height * width;
  const std::size_t taps = cin * kTaps;
  const auto rows = static_cast<Eigen::Index>(cout);
  const auto inner = static_cast<Eigen::Index>(taps);
  const auto cols_n = static_cast<Eigen::Index>(plane);

  Conv2dGrads<T> grads;
  if (need_input) grads.input = Tensor<T>(input.shape());
  std::vector<std::vector<T>> partial_w;
  if (need_params) partial_w.assign(batch, {});

  ConstMatrixMap<T> w(weights.raw(), rows, inner);
  parallel_for(batch, [&](std::size_t b) {
    ConstMatrixMap<T> dy(grad_output.raw() + b * cout * plane, rows, cols_n);
    std::vector<T> cols(taps * plane);
    if (need_params) {
      im2col(input.raw() + b * cin * plane, cin, height, width, cols.data());
      ConstMatrixMap<T> c(cols.data(), inner, cols_n);
      partial_w[b].resize(cout * taps);
      MatrixMap<T> dw(partial_w[b].data(), rows, inner);
      dw.noalias() = dy * c.transpose();
    }
    if (need_input) {
      MatrixMap<T> dc(cols.data(), inner, cols_n);
      dc.noalias() = w.transpose() * dy;
      col2im(cols.data(), cin, height, width, grads.input.raw() + b * cin * plane);
    }
  });

  if (need_params) {
    grads.weights = Tensor<T>(weights.shape());
    T* dw = grads.weights.raw();
    for (std::size_t b = 0; b < batch; ++b) {
      const T* src = partial_w[b].data();
      for (std::size_t i = 0; i < cout * taps; ++i) dw[i] += src[i];
    }
    grads.bias = Tensor<T>({cout});
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < cout; ++o) {
        const T* row = grad_output.raw() + (b * cout + o) * plane;
        T sum{0};
        for (std::size_t p = 0; p < plane; ++p) sum += row[p];
        grads.bias[o] += sum;
      }
    }
  }
  return grads;
}

template <typename T>
PoolResult<T> maxpool2x2(const Tensor<T>& input) {
  if (input.rank() != 4) throw StructuralError("maxpool2x2 input must be 4-D, got " + shape_string(input.shape()));
  const std::size_t batch = input.dim(0), channels = input.dim(1), height = input.dim(2), width = input.dim(3);
  if (height % 2 != 0 || width % 2 != 0) {
    throw StructuralError("maxpool2x2 needs even spatial extents, got " + shape_string(input.shape()));
  }
  const std::size_t oh = height / 2, ow = width / 2;
  PoolResult<T> result{Tensor<T>({batch, channels, oh, ow}), std::vector<std::size_t>(batch * channels * oh * ow)};
  const T* in = input.raw();
  T* out = result.output.raw();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < batch * channels; ++plane) {
    const std::size_t base = plane * height * width;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x, ++o) {
        const std::size_t top = base + (2 * y) * width + 2 * x;
        const std::size_t window[4] = {top, top + 1, top + width, top + width + 1};
        std::size_t best = window[0];
        for (int k = 1; k < 4; ++k) {
          if (in[window[k]] > in[best]) best = window[k];
        }
        out[o] = in[best];
        result.argmax[o] = best;
      }
    }
  }
  return result;
}

template <typename T>
Tensor<T> maxpool2x2_backward(const Shape& input_shape, std::span<const std::size_t> argmax,
                              const Tensor<T>& grad_output) {
  if (argmax.size() != grad_output.size()) {
    throw StructuralError("maxpool2x2_backward: argmax/gradient size mismatch");
  }
  Tensor<T> grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_output[i];
  return grad;
}

template <typename T>
Tensor<T> matmul_bias(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  if (input.rank() != 2 || weights.rank() != 2) {
    throw StructuralError("matmul_bias expects 2-D operands, got " + shape_string(input.shape()) + " and " +
                          shape_string(weights.shape()));
  }
  if (input.dim(1) != weights.dim(0)) {
    throw StructuralError("matmul_bias inner extent mismatch: " + shape_string(input.shape()) + " x " +
                          shape_string(weights.shape()));
  }
  const std::size_t batch = input.dim(0), features = input.dim(1), units = weights.dim(1);
  if (bias.size() != units) throw StructuralError("matmul_bias bias extent mismatch");
  Tensor<T> out({batch, units});
  ConstMatrixMap<T> x(input.raw(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(features));
  ConstMatrixMap<T> w(weights.raw(), static_cast<Eigen::Index>(features), static_cast<Eigen::Index>(units));
  MatrixMap<T> y(out.raw(), static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(units));
  y.noalias() = x * w;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t u = 0; u < units; ++u) out[b * units + u] += bias[u];
  }
  return out;
}

template <typename T>
DenseGrads<T> matmul_bias_backward(const Tensor<T>& input, const Tensor<T>& weights,
                                   const Tensor<T>& grad_output, bool need_input, bool need_params) {
  const std::size_t batch = input.dim(0), features = input.dim(1), units = weights.dim(1);
  if (grad_output.shape() != Shape{batch, units}) {
    throw StructuralError("matmul_bias_backward: gradient shape " + shape_string(grad_output.shape()) +
                          " does not match output");
  }
  const auto B = static_cast<Eigen::Index>(batch);
  const auto F = static_cast<Eigen::Index>(features);
  const auto U = static_cast<Eigen::Index>(units);
  ConstMatrixMap<T> x(input.raw(), B, F);
  ConstMatrixMap<T> w(weights.raw(), F, U);
  ConstMatrixMap<T> dy(grad_output.raw(), B, U);
  DenseGrads<T> grads;
  if (need_input) {
    grads.input = Tensor<T>(input.shape());
    MatrixMap<T> dx(grads.input.raw(), B, F);
    dx.noalias() = dy * w.transpose();
  }
  if (need_params) {
    grads.weights = Tensor<T>(weights.shape());
    MatrixMap<T> dw(grads.weights.raw(), F, U);
    dw.noalias() = x.transpose() * dy;
    grads.bias = Tensor<T>({units});
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t u = 0; u < units; ++u) grads.bias[u] += grad_output[b * units + u];
    }
  }
  return grads;
}

#define CRESCENDO_INSTANTIATE_KERNELS(T)                                                                  \
  template Tensor<T> elementwise_average<T>(std::span<const Tensor<T>* const>);                            \
  template Tensor<T> elementwise_average<T>(const std::vector<Tensor<T>>&);                                \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Conv2dGrads<T> conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool,   \
                                             bool);                                                        \
  template PoolResult<T> maxpool2x2<T>(const Tensor<T>&);                                                  \
  template Tensor<T> maxpool2x2_backward<T>(const Shape&, std::span<const std::size_t>, const Tensor<T>&); \
  template Tensor<T> matmul_bias<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template DenseGrads<T> matmul_bias_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                                 bool, bool);

CRESCENDO_INSTANTIATE_KERNELS(float)
CRESCENDO_INSTANTIATE_KERNELS(double)

}  // namespace crescendo
