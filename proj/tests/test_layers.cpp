#include <doctest.h>

#include <cmath>
#include <numeric>

#include "crescendo/kernels.hpp"
#include "crescendo/layers.hpp"
#include "oracles.hpp"

using namespace crescendo;

namespace {

// Objective sum_i r_i * y_i; its gradient with respect to y is r.
double weighted_sum(const Tensor<double>& y, const Tensor<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

struct ChannelStats {
  std::vector<double> mean, var;
};

ChannelStats channel_stats(const Tensor<double>& x) {
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.size() / (B * C);
  ChannelStats s{std::vector<double>(C), std::vector<double>(C)};
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < HW; ++i) s.mean[c] += x[(b * C + c) * HW + i];
    s.mean[c] /= static_cast<double>(B * HW);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < HW; ++i) s.var[c] += std::pow(x[(b * C + c) * HW + i] - s.mean[c], 2);
    s.var[c] /= static_cast<double>(B * HW);
  }
  return s;
}

struct BnState {
  Tensor<double> gamma, beta, mean, var;
  explicit BnState(std::size_t c) : gamma({c}, 1.0), beta({c}, 0.0), mean({c}, 0.0), var({c}, 1.0) {}
  BatchNormParams<double> params() { return {gamma, beta, mean, var}; }
};

}  // namespace

TEST_CASE("batchnorm train mode matches the two-pass reference") {
  const auto x = oracle::random_tensor<double>({4, 3, 5, 5}, 100, -2.0, 3.0);
  BnState bn(3);
  bn.gamma = oracle::random_tensor<double>({3}, 101, 0.5, 2.0);
  bn.beta = oracle::random_tensor<double>({3}, 102);
  const auto out = batchnorm_forward(x, bn.params(), Mode::Train);
  const auto ref = oracle::batchnorm_train(x, {bn.gamma[0], bn.gamma[1], bn.gamma[2]},
                                           {bn.beta[0], bn.beta[1], bn.beta[2]}, 1e-5);
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(ref[i]).epsilon(1e-6));
}

TEST_CASE("batchnorm statistics, constants and affine") {
  const auto x = oracle::random_tensor<double>({8, 4, 3, 3}, 110, -5.0, 7.0);
  BnState bn(4);
  const auto y = batchnorm_forward(x, bn.params(), Mode::Train);
  const auto s = channel_stats(y);
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(std::abs(s.mean[c]) < 1e-5);
    CHECK(std::abs(s.var[c] - 1.0) < 1e-3);
  }

  Tensor<double> constant({2, 2, 3, 3});
  for (std::size_t i = 0; i < constant.size(); ++i) constant[i] = (i / 9) % 2 ? 4.0 : -1.5;
  BnState bc(2);
  const auto zero = batchnorm_forward(constant, bc.params(), Mode::Train);
  for (double v : zero.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  // Infer with running mean 0 and variance 1 - eps is the identity before the affine.
  BnState affine(4);
  affine.gamma.fill(2.0);
  affine.beta.fill(5.0);
  affine.var.fill(1.0 - 1e-5);
  const auto z = batchnorm_forward(y, affine.params(), Mode::Infer);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == doctest::Approx(2.0 * y[i] + 5.0).epsilon(1e-12));
}

TEST_CASE("batchnorm running statistics and errors") {
  const auto x = oracle::random_tensor<double>({4, 2, 2, 2}, 120, 1.0, 3.0);
  BnState bn(2);
  batchnorm_forward(x, bn.params(), Mode::Train);
  const auto s = channel_stats(x);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(bn.mean[c] == doctest::Approx(0.1 * s.mean[c]).epsilon(1e-12));
    CHECK(bn.var[c] == doctest::Approx(0.9 + 0.1 * s.var[c]).epsilon(1e-12));
  }
  const auto before = bn.mean;
  batchnorm_forward(x, bn.params(), Mode::Infer);
  CHECK(bn.mean == before);

  BnState one(3);
  CHECK_THROWS_AS(batchnorm_forward(Tensor<double>({1, 3}), one.params(), Mode::Train), UsageError);
  CHECK_NOTHROW(batchnorm_forward(Tensor<double>({1, 3}), one.params(), Mode::Infer));
  BnState wrong(5);
  CHECK_THROWS_AS(batchnorm_forward(x, wrong.params(), Mode::Train), StructuralError);

  Tensor<double> bad = x;
  bad[0] = INFINITY;
  CHECK_THROWS_AS(batchnorm_forward(bad, bn.params(), Mode::Train), NumericalError);
}

TEST_CASE("relu") {
  const Tensor<double> x({5}, {-1, 0, 3, -0.5, 2});
  const auto y = relu(x);
  CHECK(y == Tensor<double>({5}, {0, 0, 3, 0, 2}));
  CHECK(relu(y) == y);
  const auto g = relu_backward(x, Tensor<double>({5}, 1.0));
  CHECK(g == Tensor<double>({5}, {0, 0, 1, 0, 1}));
}

TEST_CASE("dropout") {
  Rng rng(1, Stream::Dropout);
  const auto x = oracle::random_tensor<double>({10, 10}, 130);
  CHECK(dropout(x, 0.0, Mode::Train, rng).output == x);
  CHECK(dropout(x, 0.7, Mode::Infer, rng).output == x);
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::Train, rng), UsageError);
  CHECK_THROWS_AS(dropout(x, -0.1, Mode::Train, rng), UsageError);

  for (double rate : {0.1, 0.5}) {
    const Tensor<float> ones({1000000}, 1.0f);
    const auto out = dropout(ones, rate, Mode::Train, rng);
    double sum = 0.0;
    std::size_t zeros = 0;
    for (float v : out.output.data()) {
      sum += v;
      zeros += v == 0.0f;
    }
    const double mean = sum / 1e6;
    CHECK(std::abs(mean - 1.0) < 0.01);
    CHECK(std::abs(static_cast<double>(zeros) / 1e6 - rate) < 0.005);
  }
}

TEST_CASE("softmax cross-entropy") {
  const std::vector<int> labels = {3, 0, 9};
  const Tensor<double> uniform({3, 10}, 0.25);
  CHECK(softmax_cross_entropy(uniform, std::span<const int>(labels)).loss == doctest::Approx(std::log(10.0)));

  Tensor<double> confident({3, 10});
  for (std::size_t b = 0; b < 3; ++b) confident[b * 10 + static_cast<std::size_t>(labels[b])] = 1000.0;
  const auto sat = softmax_cross_entropy(confident, std::span<const int>(labels));
  CHECK(sat.loss < 1e-12);
  CHECK(sat.grad.all_finite());

  const auto z = oracle::random_tensor<double>({3, 5}, 140, -3.0, 3.0);
  const std::vector<int> y = {4, 0, 2};
  const auto got = softmax_cross_entropy(z, std::span<const int>(y));
  const auto ref = oracle::softmax_cross_entropy(z, y);
  CHECK(std::abs(got.loss - ref.loss) < 1e-8);
  for (std::size_t i = 0; i < ref.grad.size(); ++i) CHECK(std::abs(got.grad[i] - ref.grad[i]) < 1e-8);

  const std::vector<int> bad = {4, 5, 0};
  CHECK_THROWS_AS(softmax_cross_entropy(z, std::span<const int>(bad)), UsageError);
}

TEST_CASE("unit applies conv, then ReLU, then batch norm") {
  const auto z = oracle::random_tensor<double>({4, 3, 8, 8}, 150);
  auto w = oracle::random_tensor<double>({16, 3, 3, 3}, 151, -0.2, 0.2);
  Tensor<double> b({16});
  BnState bn(16);
  UnitCache<double> cache;
  const auto y = unit_forward(z, UnitParams<double>{w, b, bn.params()}, Mode::Train, {}, &cache);
  CHECK(y.shape() == Shape{4, 16, 8, 8});
  const auto s = channel_stats(y);
  for (std::size_t c = 0; c < 16; ++c) {
    CHECK(std::abs(s.mean[c]) < 1e-5);
    CHECK(std::abs(s.var[c] - 1.0) < 1e-3);
  }

  // A bias that drives every conv output negative leaves the batch-norm input at zero.
  Tensor<double> negative({16}, -100.0);
  BnState probe(16);
  UnitCache<double> probe_cache;
  const auto out = unit_forward(z, UnitParams<double>{w, negative, probe.params()}, Mode::Train, {}, &probe_cache);
  for (double v : probe_cache.activated.data()) CHECK(v == 0.0);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("gradient checks for every layer") {
  const double eps = 1e-6;

  SUBCASE("dense layer is exact") {
    auto x = oracle::random_tensor<double>({3, 4}, 200);
    auto w = oracle::random_tensor<double>({4, 5}, 201);
    auto b = oracle::random_tensor<double>({5}, 202);
    const auto r = oracle::random_tensor<double>({3, 5}, 203);
    const auto g = matmul_bias_backward(x, w, r, true, true);
    const std::vector<GradCheckTarget<double>> targets = {
        {"x", &x, &g.input}, {"w", &w, &g.weights}, {"b", &b, &g.bias}};
    // Linear in every single element, so a wide step has no truncation error.
    const auto report = grad_check<double>(targets, [&] { return weighted_sum(matmul_bias(x, w, b), r); }, 1e-2);
    CHECK(report.max_rel_error < 1e-9);
    CHECK(report.checked == 12 + 20 + 5);
  }

  SUBCASE("conv2d") {
    auto x = oracle::random_tensor<double>({2, 3, 5, 5}, 210);
    auto w = oracle::random_tensor<double>({4, 3, 3, 3}, 211);
    auto b = oracle::random_tensor<double>({4}, 212);
    const auto r = oracle::random_tensor<double>({2, 4, 5, 5}, 213);
    const auto g = conv2d_backward(x, w, r, true, true);
    const std::vector<GradCheckTarget<double>> targets = {
        {"x", &x, &g.input}, {"w", &w, &g.weights}, {"b", &b, &g.bias}};
    const auto report = grad_check<double>(targets, [&] { return weighted_sum(conv2d(x, w, b), r); }, eps);
    CHECK(report.max_rel_error < 1e-6);
  }

  SUBCASE("maxpool") {
    auto x = oracle::random_tensor<double>({2, 2, 4, 4}, 220);
    const auto r = oracle::random_tensor<double>({2, 2, 2, 2}, 221);
    const auto pooled = maxpool2x2(x);
    const auto g = maxpool2x2_backward<double>(x.shape(), pooled.argmax, r);
    const std::vector<GradCheckTarget<double>> targets = {{"x", &x, &g}};
    const auto report =
        grad_check<double>(targets, [&] { return weighted_sum(maxpool2x2(x).output, r); }, eps);
    CHECK(report.max_rel_error < 1e-4);
  }

  SUBCASE("relu away from the kink") {
    auto x = oracle::random_tensor<double>({50}, 230);
    const auto r = oracle::random_tensor<double>({50}, 231);
    const auto g = relu_backward(x, r);
    const Tensor<double> x0 = x;
    const std::vector<GradCheckTarget<double>> targets = {
        {"x", &x, &g, [&](std::size_t i) { return std::abs(x0[i]) < 1e-3; }}};
    const auto report = grad_check<double>(targets, [&] { return weighted_sum(relu(x), r); }, eps);
    CHECK(report.max_rel_error < 1e-4);
  }

  SUBCASE("dropout with a fixed mask") {
    auto x = oracle::random_tensor<double>({4, 6}, 240);
    const auto r = oracle::random_tensor<double>({4, 6}, 241);
    auto forward = [&] {
      Rng rng(9, Stream::Dropout);
      return dropout(x, 0.4, Mode::Train, rng);
    };
    const auto g = dropout_backward(forward().mask, r);
    const std::vector<GradCheckTarget<double>> targets = {{"x", &x, &g}};
    const auto report = grad_check<double>(targets, [&] { return weighted_sum(forward().output, r); }, eps);
    CHECK(report.max_rel_error < 1e-4);
  }

  SUBCASE("softmax cross-entropy") {
    auto z = oracle::random_tensor<double>({4, 6}, 250, -2.0, 2.0);
    const std::vector<int> y = {1, 5, 0, 3};
    const auto g = softmax_cross_entropy(z, std::span<const int>(y)).grad;
    const std::vector<GradCheckTarget<double>> targets = {{"z", &z, &g}};
    const auto report =
        grad_check<double>(targets, [&] { return softmax_cross_entropy(z, std::span<const int>(y)).loss; }, eps);
    CHECK(report.max_rel_error < 1e-4);
  }

  SUBCASE("batch norm in train mode") {
    auto x = oracle::random_tensor<double>({3, 2, 3, 3}, 260, -1.0, 2.0);
    auto gamma = oracle::random_tensor<double>({2}, 261, 0.5, 1.5);
    auto beta = oracle::random_tensor<double>({2}, 262);
    Tensor<double> mean({2}), var({2}, 1.0);
    const auto r = oracle::random_tensor<double>({3, 2, 3, 3}, 263);
    BatchNormOptions frozen;
    frozen.update_running = false;
    BatchNormCache<double> cache;
    batchnorm_forward(x, BatchNormParams<double>{gamma, beta, mean, var}, Mode::Train, frozen, &cache);
    const auto g = batchnorm_backward(x, gamma, cache, r, true);
    const std::vector<GradCheckTarget<double>> targets = {
        {"x", &x, &g.input}, {"gamma", &gamma, &g.gamma}, {"beta", &beta, &g.beta}};
    const auto report = grad_check<double>(
        targets,
        [&] {
          return weighted_sum(
              batchnorm_forward(x, BatchNormParams<double>{gamma, beta, mean, var}, Mode::Train, frozen), r);
        },
        eps);
    CHECK(report.max_rel_error < 1e-4);
  }

  SUBCASE("batch norm in infer mode") {
    auto x = oracle::random_tensor<double>({2, 3, 2, 2}, 270);
    auto gamma = oracle::random_tensor<double>({3}, 271, 0.5, 1.5);
    auto beta = oracle::random_tensor<double>({3}, 272);
    Tensor<double> mean = oracle::random_tensor<double>({3}, 273), var = oracle::random_tensor<double>({3}, 274, 0.5, 2);
    const auto r = oracle::random_tensor<double>({2, 3, 2, 2}, 275);
    BatchNormCache<double> cache;
    batchnorm_forward(x, BatchNormParams<double>{gamma, beta, mean, var}, Mode::Infer, {}, &cache);
    const auto g = batchnorm_backward(x, gamma, cache, r, true);
    const std::vector<GradCheckTarget<double>> targets = {
        {"x", &x, &g.input}, {"gamma", &gamma, &g.gamma}, {"beta", &beta, &g.beta}};
    const auto report = grad_check<double>(
        targets,
        [&] { return weighted_sum(batchnorm_forward(x, BatchNormParams<double>{gamma, beta, mean, var}, Mode::Infer), r); },
        eps);
    CHECK(report.max_rel_error < 1e-4);
  }

  SUBCASE("conv-relu-bn unit") {
    auto z = oracle::random_tensor<double>({3, 2, 4, 4}, 280);
    auto w = oracle::random_tensor<double>({3, 2, 3, 3}, 281, -0.5, 0.5);
    auto b = oracle::random_tensor<double>({3}, 282, -0.1, 0.1);
    auto gamma = oracle::random_tensor<double>({3}, 283, 0.5, 1.5);
    auto beta = oracle::random_tensor<double>({3}, 284);
    Tensor<double> mean({3}), var({3}, 1.0);
    const auto r = oracle::random_tensor<double>({3, 3, 4, 4}, 285);
    BatchNormOptions frozen;
    frozen.update_running = false;
    auto params = [&] { return UnitParams<double>{w, b, BatchNormParams<double>{gamma, beta, mean, var}}; };
    UnitCache<double> cache;
    unit_forward(z, params(), Mode::Train, frozen, &cache);
    const auto g = unit_backward(z, params(), cache, r, true, true);
    const std::vector<GradCheckTarget<double>> targets = {{"z", &z, &g.input},
                                                          {"w", &w, &g.conv_weights},
                                                          {"b", &b, &g.conv_bias},
                                                          {"gamma", &gamma, &g.gamma},
                                                          {"beta", &beta, &g.beta}};
    const auto report =
        grad_check<double>(targets, [&] { return weighted_sum(unit_forward(z, params(), Mode::Train, frozen), r); }, eps);
    INFO("worst element: " << report.worst);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("grad_check flags a wrong gradient") {
  auto x = oracle::random_tensor<double>({4}, 290);
  Tensor<double> wrong({4}, 0.0);
  const std::vector<GradCheckTarget<double>> targets = {{"x", &x, &wrong}};
  const auto report = grad_check<double>(targets, [&] { return x[0] * x[0] + x[1]; }, 1e-6);
  CHECK(report.max_rel_error > 0.5);
  CHECK(report.worst.rfind("x[", 0) == 0);
}
