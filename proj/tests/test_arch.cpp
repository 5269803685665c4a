#include <doctest.h>

#include <set>

#include "crescendo/kernels.hpp"
#include "crescendo/network.hpp"
#include "crescendo/trainer.hpp"
#include "oracles.hpp"

using namespace crescendo;

namespace {

NetworkSpec reference_spec() { return make_network_spec(4, 1, {128, 256, 512}, WidthMode::EqualWithinBlock, 10); }

// Every unit maps width -> width, including the first block's input.
NetworkSpec uniform_spec(int scale, int width) {
  NetworkSpec spec = make_network_spec(scale, 1, {width, width, width}, WidthMode::EqualWithinBlock, 10);
  spec.in_channels = width;
  spec.blocks.front().in_channels = width;
  validate(spec);
  return spec;
}

// Small double-precision network for gradient and subnet checks.
NetworkSpec tiny_spec(int scale, int blocks) {
  std::vector<int> widths(static_cast<std::size_t>(blocks), 3);
  if (blocks > 1) widths.back() = 4;
  NetworkSpec spec = make_network_spec(scale, 1, widths, WidthMode::EqualWithinBlock, 3);
  spec.height = spec.width = 8;
  spec.fc1 = 6;
  spec.fc2 = 5;
  validate(spec);
  return spec;
}

ParameterStore<double> random_store(const Network<double>& net, std::uint64_t seed) {
  Rng rng(seed, Stream::Init);
  InitConfig init;
  init.conv_stddev = 0.3;
  init.fc_stddev = 0.3;
  ParameterStore<double> store = init_params<double>(net.plan(), init, rng);
  // Non-trivial affine BN parameters and biases.
  std::uint64_t k = seed * 100;
  for (auto& e : store) {
    if (e.info.role == ParamRole::BnGamma) e.value = oracle::random_tensor<double>(e.info.shape, ++k, 0.5, 1.5);
    if (e.info.role == ParamRole::BnBeta || e.info.role == ParamRole::ConvBias || e.info.role == ParamRole::FcBias) {
      e.value = oracle::random_tensor<double>(e.info.shape, ++k, -0.1, 0.1);
    }
  }
  return store;
}

}  // namespace

TEST_CASE("width schedule") {
  CHECK(width_schedule(128, 256, 2) == std::vector<int>{192, 256});
  CHECK(width_schedule(128, 256, 4) == std::vector<int>{160, 192, 224, 256});
  for (int k = 1; k <= 6; ++k) CHECK(width_schedule(128, 128, k) == std::vector<int>(static_cast<std::size_t>(k), 128));
  CHECK(width_schedule(3, 16, 3) == std::vector<int>{7, 12, 16});  // 7.33 -> 7, 11.67 -> 12
  CHECK(width_schedule(1, 2, 2) == std::vector<int>{2, 2});        // 1.5 rounds up
  CHECK_THROWS_AS(width_schedule(128, 256, 0), UsageError);
}

TEST_CASE("branch structure") {
  for (int interval = 1; interval <= 3; ++interval) {
    for (int n = 1; n <= 6; ++n) {
      for (WidthMode mode : {WidthMode::EqualGlobal, WidthMode::EqualWithinBlock, WidthMode::IncreasingWithinBranch}) {
        const BlockSpec block{6, interval, 16, 40, mode};
        const BranchSpec branch = build_branch(block, n);
        REQUIRE(branch.units.size() == static_cast<std::size_t>(n * interval));
        CHECK(branch.units.front().in_channels == 16);
        CHECK(branch.units.back().out_channels == 40);
        for (std::size_t k = 1; k < branch.units.size(); ++k) {
          CHECK(branch.units[k].in_channels == branch.units[k - 1].out_channels);
        }
      }
    }
  }
  const BlockSpec inc{4, 1, 128, 256, WidthMode::IncreasingWithinBranch};
  const BranchSpec b4 = build_branch(inc, 4);
  CHECK(b4.units[0] == UnitShape{128, 160});
  CHECK(b4.units[3] == UnitShape{224, 256});
  CHECK_THROWS_AS(build_branch(inc, 0), UsageError);
  CHECK_THROWS_AS(build_branch(inc, 5), UsageError);
}

TEST_CASE("depth accounting") {
  const NetworkSpec spec = reference_spec();
  CHECK(network_depth(spec) == 15);
  CHECK(subnet_depth(spec, PathSet({1, 2, 3, 4})) == 15);
  CHECK(subnet_depth(spec, PathSet({1, 2, 3})) == 12);
  CHECK(subnet_depth(spec, PathSet({1, 2})) == 9);
  CHECK(subnet_depth(spec, PathSet({1})) == 6);
  CHECK(subnet_depth(spec, PathSet({2, 3})) == 12);
  const NetworkSpec i2 = make_network_spec(3, 2, {8, 8, 8}, WidthMode::EqualWithinBlock, 10);
  CHECK(network_depth(i2) == 3 * 3 * 2 + 3);
}

TEST_CASE("parameter accounting") {
  CHECK(unit_parameter_count({128, 128}) == 147584 + 256);
  CHECK(flatten_extent(reference_spec()) == 8192);
  const std::uint64_t total = count_parameters(reference_spec());
  CHECK(total == 27740362);
  CHECK(std::abs(static_cast<double>(total) - 27.7e6) / 27.7e6 < 0.02);

  // Sum over the plan agrees with the closed-form count.
  const Network<float> net(reference_spec());
  std::uint64_t from_plan = 0;
  for (const auto& info : net.plan()) {
    if (is_learnable(info.role)) from_plan += shape_size(info.shape);
  }
  CHECK(from_plan == total);

  const auto blocks = count_block_parameters(reference_spec());
  std::uint64_t branch_sum = 0;
  for (const auto& b : blocks) {
    std::uint64_t s = 0;
    for (auto p : b.per_branch) s += p;
    CHECK(s == b.total);
    branch_sum += b.total;
  }
  CHECK(total - branch_sum == 8192ULL * 384 + 384 + 384 * 192 + 192 + 192 * 10 + 10);
}

TEST_CASE("parameter count grows affinely with the unit count") {
  // Least-squares oracle: fit count = a + b * units over S = 1..6 and
  // require zero residual.
  std::vector<double> units, counts;
  for (int s = 1; s <= 6; ++s) {
    const NetworkSpec spec = uniform_spec(s, 32);
    units.push_back(static_cast<double>(branch_unit_count(spec, PathSet::full(s))));
    counts.push_back(static_cast<double>(count_parameters(spec)));
  }
  const double n = 6.0;
  double su = 0, sc = 0, suu = 0, suc = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    su += units[i];
    sc += counts[i];
    suu += units[i] * units[i];
    suc += units[i] * counts[i];
  }
  const double slope = (n * suc - su * sc) / (n * suu - su * su);
  const double intercept = (sc - slope * su) / n;
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(intercept + slope * units[i] - counts[i]) < 1e-6);
  CHECK(slope == doctest::Approx(static_cast<double>(unit_parameter_count({32, 32}))));

  // With an RGB input the first unit of each branch differs, which adds a
  // term linear in S: count = a + b * units + c * S exactly.
  std::vector<std::int64_t> rgb;
  for (int s = 1; s <= 6; ++s) {
    rgb.push_back(static_cast<std::int64_t>(
        count_parameters(make_network_spec(s, 1, {128, 128, 128}, WidthMode::EqualWithinBlock, 10))));
  }
  CHECK(rgb == std::vector<std::int64_t>{1162186, 1905226, 3091786, 4721866, 6795466, 9312586});
  const std::int64_t per_unit = static_cast<std::int64_t>(unit_parameter_count({128, 128}));
  const std::int64_t first_delta = static_cast<std::int64_t>(unit_parameter_count({3, 128})) - per_unit;
  for (int s = 2; s <= 6; ++s) {
    const std::int64_t du = 3LL * (s * (s + 1) / 2 - 1);
    CHECK(rgb[static_cast<std::size_t>(s - 1)] - rgb[0] == du * per_unit + (s - 1) * first_delta);
  }
  // Quadratic, not exponential, in S.
  CHECK(static_cast<double>(rgb[5]) / static_cast<double>(rgb[2]) < 4.0);
}

TEST_CASE("path sets") {
  CHECK(PathSet::parse("1,3").branches() == std::vector<int>{1, 3});
  CHECK(PathSet::parse("{3, 1}").branches() == std::vector<int>{1, 3});
  CHECK(PathSet::parse("2").branches() == std::vector<int>{2});
  CHECK(PathSet({4, 2}).to_string() == "{2,4}");
  CHECK(PathSet::full(4) == PathSet({1, 2, 3, 4}));
  CHECK_THROWS_AS(PathSet::parse(""), UsageError);
  CHECK_THROWS_AS(PathSet::parse("1,x"), UsageError);
  CHECK_THROWS_AS(PathSet::parse("1,1"), UsageError);
  CHECK_THROWS_AS(PathSet::parse("0"), UsageError);
  CHECK_THROWS_AS(PathSet({}), UsageError);
  CHECK_THROWS_AS(PathSet({5}).check_against(4), UsageError);
  CHECK(PathSet({1, 3}).mask(4) == std::vector<bool>{true, false, true, false});

  const auto all = all_path_sets(4);
  CHECK(all.size() == 15);
  CHECK(all.front() == PathSet({1}));
  CHECK(all.back() == PathSet({1, 2, 3, 4}));
  std::set<std::vector<int>> unique;
  for (const auto& p : all) unique.insert(p.branches());
  CHECK(unique.size() == 15);
}

TEST_CASE("network assembly") {
  CHECK_THROWS_AS(make_network_spec(4, 1, {}, WidthMode::EqualWithinBlock, 10), UsageError);
  CHECK_THROWS_AS(make_network_spec(1, 1, {4, 4, 4, 4, 4, 4}, WidthMode::EqualWithinBlock, 10), StructuralError);

  const Network<float> net(make_network_spec(4, 1, {16, 32, 64}, WidthMode::EqualWithinBlock, 10));
  const auto& plan = net.plan();
  std::set<std::string> names;
  for (const auto& info : plan) names.insert(info.name);
  CHECK(names.size() == plan.size());
  CHECK(plan.size() == 3 * 10 * kUnitSlots + kHeadSlots);
  CHECK(plan.front().name == "block1/branch1/unit1/conv_w");
  CHECK(plan.back().name == "logits/b");

  // A one-block, one-branch network is a plain single-conv CNN.
  const NetworkSpec plain = make_network_spec(1, 1, {8}, WidthMode::EqualWithinBlock, 10);
  CHECK(network_depth(plain) == 4);
  CHECK(Network<float>(plain).plan().size() == kUnitSlots + kHeadSlots);
}

TEST_CASE("block forward averages the active branches") {
  const NetworkSpec spec = tiny_spec(3, 1);
  const Network<double> net(spec);
  ParameterStore<double> store = random_store(net, 1);
  const auto z = oracle::random_tensor<double>({2, 3, 8, 8}, 300);
  const BlockParams<double> bp = net.block_params(store, 0);
  BatchNormOptions frozen;
  frozen.update_running = false;

  std::vector<Tensor<double>> single;
  for (int n = 0; n < 3; ++n) {
    BranchMask mask(3, false);
    mask[static_cast<std::size_t>(n)] = true;
    single.push_back(block_forward(bp, z, mask, Mode::Train, frozen));
  }
  const auto all = block_forward(bp, z, BranchMask(3, true), Mode::Train, frozen);
  const auto avg = elementwise_average(single);
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == doctest::Approx(avg[i]).epsilon(1e-12));
  const auto pair = block_forward(bp, z, BranchMask{true, false, true}, Mode::Train, frozen);
  for (std::size_t i = 0; i < pair.size(); ++i) {
    CHECK(pair[i] == doctest::Approx((single[0][i] + single[2][i]) / 2).epsilon(1e-12));
  }
  CHECK_THROWS_AS(block_forward(bp, z, BranchMask(3, false), Mode::Train, frozen), UsageError);

  // Branches forced to constants 1 and 3 through beta with gamma 0.
  const Network<double> net2(tiny_spec(2, 1));
  ParameterStore<double> s2 = random_store(net2, 2);
  for (auto& e : s2) {
    if (e.info.role == ParamRole::BnGamma) e.value.fill(0.0);
    if (e.info.role == ParamRole::BnBeta) e.value.fill(e.info.branch == 1 ? 1.0 : 3.0);
  }
  const auto two = block_forward(net2.block_params(s2, 0), z, BranchMask(2, true), Mode::Train, frozen);
  for (double v : two.data()) CHECK(v == 2.0);
}

TEST_CASE("block gradients match finite differences under a fixed drop mask") {
  const NetworkSpec spec = tiny_spec(3, 1);
  const Network<double> net(spec);
  ParameterStore<double> store = random_store(net, 3);
  auto z = oracle::random_tensor<double>({2, 3, 8, 8}, 310);
  const auto r = oracle::random_tensor<double>({2, 3, 8, 8}, 311);
  BatchNormOptions frozen;
  frozen.update_running = false;

  for (const BranchMask& mask : {BranchMask{true, true, true}, BranchMask{true, false, true}}) {
    BlockTape<double> tape;
    block_forward(net.block_params(store, 0), z, mask, Mode::Train, frozen, &tape);
    const auto grads =
        block_backward(net.block_params(store, 0), z, tape, r, true, [](std::size_t, std::size_t) { return true; });

    std::vector<GradCheckTarget<double>> targets = {{"z", &z, &grads.input}};
    for (std::size_t n = 0; n < 3; ++n) {
      for (std::size_t u = 0; u <= n; ++u) {
        const std::size_t slot = net.unit_slot(0, n, u);
        if (!mask[n]) {
          CHECK_FALSE(grads.units[n][u].has_value());
          continue;
        }
        const auto& g = *grads.units[n][u];
        const std::string prefix = store.entry(slot).info.name;
        targets.push_back({prefix, &store.value(slot), &g.conv_weights});
        targets.push_back({prefix, &store.value(slot + 1), &g.conv_bias});
        targets.push_back({prefix, &store.value(slot + 2), &g.gamma});
        targets.push_back({prefix, &store.value(slot + 3), &g.beta});
      }
    }
    const auto report = grad_check<double>(
        targets,
        [&] {
          const auto y = block_forward(net.block_params(store, 0), z, mask, Mode::Train, frozen);
          double s = 0.0;
          for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
          return s;
        },
        1e-6);
    INFO("worst: " << report.worst);
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("network gradients match finite differences end to end") {
  const NetworkSpec spec = tiny_spec(2, 2);
  const Network<double> net(spec);
  ParameterStore<double> store = random_store(net, 4);
  auto x = oracle::random_tensor<double>({3, 3, 8, 8}, 320);
  const std::vector<int> labels = {0, 2, 1};

  ForwardOptions options;
  options.mode = Mode::Train;
  options.masks = {BranchMask{true, true}, BranchMask{false, true}};
  options.dropout_rate = 0.3;
  options.bn.update_running = false;
  auto loss = [&](Tape<double>* tape) {
    Rng rng(5, Stream::Dropout);
    ForwardOptions o = options;
    o.dropout_rng = &rng;
    const auto logits = net.forward(store, x, o, tape);
    return softmax_cross_entropy(logits, std::span<const int>(labels));
  };

  Tape<double> tape;
  const auto result = loss(&tape);
  Gradients<double> grads(store.size());
  const auto input_grad = net.backward(store, tape, result.grad, grads, true);
  REQUIRE(input_grad.has_value());

  std::vector<GradCheckTarget<double>> targets = {{"input", &x, &*input_grad}};
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store.trainable(i)) continue;
    REQUIRE(grads.values[i].has_value());
    targets.push_back({store.entry(i).info.name, &store.value(i), &*grads.values[i]});
  }
  const auto report = grad_check<double>(targets, [&] { return loss(nullptr).loss; }, 1e-6);
  INFO("worst: " << report.worst);
  CHECK(report.max_rel_error < 1e-4);

  // Branch 1 of block 2 was dropped, so its gradient is exactly zero.
  const std::size_t dropped = net.unit_slot(1, 0, 0);
  for (double v : grads.values[dropped]->data()) CHECK(v == 0.0);
}

TEST_CASE("subnets share parameters with the whole network") {
  const NetworkSpec spec = tiny_spec(3, 2);
  const Network<double> net(spec);
  ParameterStore<double> store = random_store(net, 6);
  // Non-trivial running statistics for Infer mode.
  for (auto& e : store) {
    if (e.info.role == ParamRole::BnRunningMean) e.value = oracle::random_tensor<double>(e.info.shape, 7, -0.2, 0.2);
    if (e.info.role == ParamRole::BnRunningVar) e.value = oracle::random_tensor<double>(e.info.shape, 8, 0.5, 2.0);
  }
  const auto x = oracle::random_tensor<double>({4, 3, 8, 8}, 330);
  const auto whole = net.infer(store, x);
  const auto full = subnet(net, store, PathSet::full(3)).forward(x);
  CHECK(full == whole);
  CHECK(net.infer(store, x) == whole);
  CHECK(subnet(net, store, PathSet({1})).depth() == 2 * 1 + 3);
  CHECK(subnet(net, store, PathSet({1})).forward(x) != whole);
  CHECK_THROWS_AS(subnet(net, store, PathSet({4})), UsageError);

  const auto masks = std::vector<BranchMask>(2, PathSet({1, 3}).mask(3));
  const auto pair = subnet(net, store, PathSet({1, 3})).forward(x);
  const auto masked = net.infer(store, x, masks);
  CHECK(pair == masked);
}

TEST_CASE("parameter store") {
  ParameterStore<float> store;
  const ParamInfo w{"a/w", {2, 2}, ParamRole::FcWeight};
  const ParamInfo m{"a/mean", {2}, ParamRole::BnRunningMean};
  CHECK(store.add(w, Tensor<float>({2, 2}, 1.0f)) == 0);
  CHECK(store.add(m, Tensor<float>({2}), true) == 1);
  CHECK(store.trainable(0));
  CHECK_FALSE(store.trainable(1));
  store.set_trainable(1, true);
  CHECK_FALSE(store.trainable(1));
  CHECK_THROWS_AS(store.add(w, Tensor<float>({2, 2})), UsageError);
  CHECK_THROWS_AS(store.add({"b/w", {3}, ParamRole::FcWeight}, Tensor<float>({2})), StructuralError);
  CHECK(store.learnable_count() == 4);
  store.set_trainable(0, false);
  CHECK(store.learnable_count(true) == 0);
  CHECK(store.index("a/mean") == 1);
  CHECK_FALSE(store.find("nope").has_value());

  const auto before = store.fingerprint();
  store.value(1)[0] = 1e-30f;
  CHECK(store.fingerprint() != before);
  const auto weights_only = [](const auto& e) { return e.info.role == ParamRole::FcWeight; };
  ParameterStore<float> copy;
  copy.add(w, Tensor<float>({2, 2}, 1.0f));
  CHECK(copy.fingerprint(weights_only) == store.fingerprint(weights_only));
}
