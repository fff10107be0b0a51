#include <cmath>
#include <thread>

#include "doctest.h"
#include "mstaf/error.hpp"
#include "mstaf/ops.hpp"
#include "mstaf/optim.hpp"

using namespace mstaf;

TEST_SUITE("tensor") {
  TEST_CASE("sum of squares") {
    auto x = Tensor<double>::from_data({3}, {1, 2, 3});
    x.set_requires_grad(true);
    ops::sum(ops::mul(x, x)).backward();
    CHECK(x.grad() == std::vector<double>{2, 4, 6});
  }

  TEST_CASE("fan-out accumulates") {
    auto x = Tensor<float>::from_data({1}, {0.7f});
    x.set_requires_grad(true);
    ops::sum(ops::add(x, x)).backward();
    CHECK(x.grad()[0] == 2.0f);
  }

  TEST_CASE("unreached leaves get zero gradient") {
    auto x = Tensor<double>::from_data({2}, {1, 2});
    auto unused = Tensor<double>::from_data({2}, {3, 4});
    x.set_requires_grad(true);
    unused.set_requires_grad(true);
    ops::sum(x).backward();
    CHECK_FALSE(unused.has_grad());
    CHECK(unused.grad() == std::vector<double>{0, 0});
  }

  TEST_CASE("backward on a non-scalar is a usage error") {
    auto x = Tensor<double>::from_data({2}, {1, 2});
    x.set_requires_grad(true);
    CHECK_THROWS_AS(ops::mul(x, x).backward(), UsageError);
  }

  TEST_CASE("no-grad guard stops recording on this thread only") {
    auto x = Tensor<double>::from_data({1}, {2});
    x.set_requires_grad(true);
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_enabled());
      CHECK_FALSE(ops::mul(x, x).requires_grad());
      bool other = false;
      std::thread([&] { other = grad_enabled(); }).join();
      CHECK(other);
    }
    CHECK(grad_enabled());
    CHECK(ops::mul(x, x).requires_grad());
  }

  TEST_CASE("detach cuts the graph") {
    auto x = Tensor<double>::from_data({1}, {3});
    x.set_requires_grad(true);
    auto y = ops::mul(x, x).detach();
    CHECK_FALSE(y.requires_grad());
    CHECK(y.item() == 9.0);
  }

  TEST_CASE("shape errors name both shapes") {
    const auto a = Tensor<float>::zeros({2, 3}), b = Tensor<float>::zeros({4, 2});
    try {
      ops::matmul(a, b);
      FAIL("expected a DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2,3]") != std::string::npos);
      CHECK(msg.find("[4,2]") != std::string::npos);
    }
  }
}

TEST_SUITE("tensor") {
  TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    ParamStore<double> p;
    p.add("w", Tensor<double>::from_data({3}, {1, -2, 3}));
    Adam<double> adam(AdamOptions{.lr = 0.1});
    for (int i = 0; i < 5; ++i) {
      p.zero_grad();
      adam.step(p);
    }
    CHECK(p.get("w").values() == std::vector<double>{1, -2, 3});
    CHECK(adam.step_count() == 5);
  }

  TEST_CASE("adam: first step moves each parameter by about lr against its gradient sign") {
    ParamStore<double> p;
    auto& w = p.add("w", Tensor<double>::from_data({3}, {0, 0, 0}));
    w.grad_buffer() = {0.5, -3.0, 1e-3};
    Adam<double> adam(AdamOptions{.lr = 0.01});
    adam.step(p);
    CHECK(w.values()[0] == doctest::Approx(-0.01).epsilon(1e-4));
    CHECK(w.values()[1] == doctest::Approx(0.01).epsilon(1e-4));
    CHECK(w.values()[2] == doctest::Approx(-0.01).epsilon(1e-4));
  }

  TEST_CASE("adam: 100 steps on (x-3)^2 from 0 with lr 0.1") {
    ParamStore<double> p;
    auto& x = p.add("x", Tensor<double>::from_data({1}, {0}));
    Adam<double> adam(AdamOptions{.lr = 0.1});
    for (int i = 0; i < 100; ++i) {
      p.zero_grad();
      auto d = ops::affine(x, 1.0, -3.0);
      ops::sum(ops::mul(d, d)).backward();
      adam.step(p);
    }
    CHECK(std::abs(x.values()[0] - 3.0) < 0.1);
  }
}
