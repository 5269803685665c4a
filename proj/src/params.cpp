#include "crescendo/params.hpp"

namespace crescendo {

std::string_view role_name(ParamRole role) {
  switch (role) {
    case ParamRole::ConvWeight: return "conv_w";
    case ParamRole::ConvBias: return "conv_b";
    case ParamRole::BnGamma: return "bn_gamma";
    case ParamRole::BnBeta: return "bn_beta";
    case ParamRole::BnRunningMean: return "bn_mean";
    case ParamRole::BnRunningVar: return "bn_var";
    case ParamRole::FcWeight: return "w";
    case ParamRole::FcBias: return "b";
  }
  return "unknown";
}

ParameterPlan make_parameter_plan(const NetworkSpec& spec) {
  validate(spec);
  ParameterPlan plan;
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
    const BlockSpec& block = spec.blocks[b];
    for (int n = 1; n <= block.scale; ++n) {
      const BranchSpec branch = build_branch(block, n);
      for (std::size_t k = 0; k < branch.units.size(); ++k) {
        const auto in = static_cast<std::size_t>(branch.units[k].in_channels);
        const auto out = static_cast<std::size_t>(branch.units[k].out_channels);
        const std::string prefix = "block" + std::to_string(b + 1) + "/branch" + std::to_string(n) + "/unit" +
                                   std::to_string(k + 1) + "/";
        const int bi = static_cast<int>(b + 1), ki = static_cast<int>(k + 1);
        auto add = [&](ParamRole role, Shape shape) {
          plan.push_back(ParamInfo{prefix + std::string(role_name(role)), std::move(shape), role, bi, n, ki});
        };
        add(ParamRole::ConvWeight, {out, in, 3, 3});
        add(ParamRole::ConvBias, {out});
        add(ParamRole::BnGamma, {out});
        add(ParamRole::BnBeta, {out});
        add(ParamRole::BnRunningMean, {out});
        add(ParamRole::BnRunningVar, {out});
      }
    }
  }
  const std::size_t flat = flatten_extent(spec);
  const auto fc1 = static_cast<std::size_t>(spec.fc1);
  const auto fc2 = static_cast<std::size_t>(spec.fc2);
  const auto classes = static_cast<std::size_t>(spec.classes);
  plan.push_back({"fc1/w", {flat, fc1}, ParamRole::FcWeight});
  plan.push_back({"fc1/b", {fc1}, ParamRole::FcBias});
  plan.push_back({"fc2/w", {fc1, fc2}, ParamRole::FcWeight});
  plan.push_back({"fc2/b", {fc2}, ParamRole::FcBias});
  plan.push_back({"logits/w", {fc2, classes}, ParamRole::FcWeight});
  plan.push_back({"logits/b", {classes}, ParamRole::FcBias});
  return plan;
}

}  // namespace crescendo
