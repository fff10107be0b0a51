#include <map>
#include <string>

#include "criteria.hpp"
#include "doctest.h"
#include "mstaf/decoder.hpp"
#include "op_cases.hpp"

using namespace mstaf;

TEST_SUITE("gradients") {
  TEST_CASE("every op and layer against central differences") {
    auto cases = gradcheck::op_cases();
    for (auto& c : gradcheck::layer_cases()) cases.push_back(std::move(c));
    std::map<std::string, int> shapes_per_op;
    std::uint64_t seed = 100;
    for (const auto& c : cases) {
      const auto r32 = gradcheck::check<float>(c, seed, 1e-3);
      const auto r64 = gradcheck::check<double>(c, seed, 1e-6);
      ++seed;
      INFO(r32.where);
      CHECK(r32.max_err <= 1e-3);
      INFO(r64.where);
      CHECK(r64.max_err <= 1e-6);
      const auto op = c.name.substr(0, c.name.find(' '));
      ++shapes_per_op[op];
    }
    for (const auto& [op, n] : shapes_per_op) {
      if (op == "fan-out") continue;
      INFO(op);
      CHECK(n >= 3);
    }
  }

  TEST_CASE("bce gradient is (M - G) / (M (1 - M)) / N") {
    const std::vector<double> m{0.9, 0.2, 0.6, 0.05}, g{1, 0, 0, 1};
    auto mt = Tensor<double>::from_data({1, 1, 2, 2}, m);
    mt.set_requires_grad(true);
    bce_loss(mt, Tensor<double>::from_data({1, 1, 2, 2}, g)).backward();
    const auto grad = mt.grad();
    for (int i = 0; i < 4; ++i) CHECK(grad[i] == doctest::Approx((m[i] - g[i]) / (m[i] * (1 - m[i])) / 4.0));
  }

  TEST_CASE("end-to-end parameter gradients at 32x32") {
    auto cfg = ModelConfig::toy();
    cfg.resolution = 32;
    std::vector<std::pair<std::string, double>> per;
    const double err = criteria::end_to_end_error(
        cfg, {"stage1.embed.conv.weight", "stage2.block1.msproj.branch2.weight", "stage3.block1.ffn.fc1.weight",
              "decoder.level1.conv.bias", "decoder.head.weight"},
        21, &per);
    for (const auto& [name, e] : per) {
      INFO(name << " rel err " << e);
      CHECK(e <= 5e-3);
    }
    CHECK(err <= 5e-3);
  }
}
