#include <cmath>
#include <cstring>

#include "doctest.h"
#include "mstaf/error.hpp"
#include "mstaf/ops.hpp"
#include "oracles.hpp"

using namespace mstaf;

namespace {

template <typename T = double>
Tensor<T> t(Shape s, std::vector<T> v) {
  return Tensor<T>::from_data(std::move(s), std::move(v));
}

Tensor<double> randn(Rng& rng, Shape s) {
  std::vector<double> v(static_cast<std::size_t>(numel(s)));
  for (auto& x : v) x = rng.normal();
  return t(std::move(s), std::move(v));
}

}  // namespace

TEST_SUITE("ops") {
  TEST_CASE("matmul examples") {
    const auto x = t({2, 2}, {0.3, -1.5, 2.0, 7.25});
    CHECK(ops::matmul(t({2, 2}, {1, 0, 0, 1}), x).values() == x.values());
    CHECK(ops::matmul(t({2, 2}, {1, 2, 3, 4}), t({2, 1}, {1, 1})).values() == std::vector<double>{3, 7});
    CHECK_THROWS_AS(ops::matmul(t({2, 3}, std::vector<double>(6)), t({2, 3}, std::vector<double>(6))), DimensionError);
  }

  TEST_CASE("matmul transposed operands and batches agree with naive products") {
    Rng rng(1);
    const auto a = randn(rng, {2, 4, 3}), b = randn(rng, {2, 5, 3});
    const auto c = ops::matmul(a, b, false, true);
    REQUIRE(c.shape() == Shape{2, 4, 5});
    for (int bb = 0; bb < 2; ++bb)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) {
          double want = 0;
          for (int k = 0; k < 3; ++k) want += a.at({bb, i, k}) * b.at({bb, j, k});
          CHECK(c.at({bb, i, j}) == doctest::Approx(want).epsilon(1e-12));
        }
  }

  TEST_CASE("conv2d examples") {
    Rng rng(2);
    const auto x = randn(rng, {1, 3, 4, 5});
    std::vector<double> eye(9, 0.0);
    for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
    CHECK(ops::conv2d(x, t({3, 3, 1, 1}, eye), {}, {1, 0, 1}).values() == x.values());
    const auto ones = t({1, 1, 3, 3}, std::vector<double>(9, 1.0));
    const auto nine = ops::conv2d(ones, ones, {}, {1, 0, 1});
    CHECK(nine.shape() == Shape{1, 1, 1, 1});
    CHECK(nine.item() == 9.0);
    CHECK_THROWS_AS(ops::conv2d(t({1, 1, 2, 2}, std::vector<double>(4)), ones, {}, {1, 0, 1}), ConfigError);
  }

  TEST_CASE("conv2d matches the loop oracle") {
    Rng rng(3);
    struct Spec {
      Shape x, w;
      int stride, pad, groups;
    };
    for (const auto& s : {Spec{{2, 3, 7, 6}, {4, 3, 3, 3}, 1, 1, 1}, Spec{{1, 4, 8, 8}, {4, 1, 3, 3}, 2, 1, 4},
                          Spec{{1, 3, 9, 9}, {2, 3, 7, 7}, 4, 3, 1}, Spec{{1, 4, 5, 5}, {6, 2, 3, 3}, 1, 0, 2}}) {
      const auto x = randn(rng, s.x), w = randn(rng, s.w), b = randn(rng, {s.w[0]});
      const auto got = ops::conv2d(x, w, b, {s.stride, s.pad, s.groups});
      const auto cin = s.x[1], kh = s.w[2], kw = s.w[3];
      oracle::Kernel kern(s.w[0], oracle::Vol(s.w[1], std::vector<std::vector<double>>(kh, std::vector<double>(kw))));
      for (std::int64_t o = 0; o < s.w[0]; ++o)
        for (std::int64_t c = 0; c < s.w[1]; ++c)
          for (std::int64_t y = 0; y < kh; ++y)
            for (std::int64_t xx = 0; xx < kw; ++xx) kern[o][c][y][xx] = w.at({o, c, y, xx});
      for (std::int64_t bb = 0; bb < s.x[0]; ++bb) {
        oracle::Vol img(cin, std::vector<std::vector<double>>(s.x[2], std::vector<double>(s.x[3])));
        for (std::int64_t c = 0; c < cin; ++c)
          for (std::int64_t y = 0; y < s.x[2]; ++y)
            for (std::int64_t xx = 0; xx < s.x[3]; ++xx) img[c][y][xx] = x.at({bb, c, y, xx});
        const auto want = oracle::conv2d(img, kern, b.values(), s.stride, s.pad, s.groups);
        REQUIRE(got.dim(2) == std::int64_t(want[0].size()));
        REQUIRE(got.dim(3) == std::int64_t(want[0][0].size()));
        for (std::size_t o = 0; o < want.size(); ++o)
          for (std::size_t y = 0; y < want[o].size(); ++y)
            for (std::size_t xx = 0; xx < want[o][y].size(); ++xx)
              CHECK(got.at({bb, std::int64_t(o), std::int64_t(y), std::int64_t(xx)}) ==
                    doctest::Approx(want[o][y][xx]).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("layer_norm") {
    const auto g = t({4}, {1, 1, 1, 1}), b = t({4}, {0, 0, 0, 0});
    CHECK(ops::layer_norm(t({1, 4}, {5, 5, 5, 5}), g, b).values() == std::vector<double>{0, 0, 0, 0});
    Rng rng(4);
    const auto x = randn(rng, {6, 4});
    const auto y = ops::layer_norm(x, g, b);
    for (int i = 0; i < 6; ++i) {
      double mx = 0, vx = 0, mu = 0, var = 0;
      for (int j = 0; j < 4; ++j) mx += x.at({i, j}) / 4, mu += y.at({i, j}) / 4;
      for (int j = 0; j < 4; ++j) {
        vx += (x.at({i, j}) - mx) * (x.at({i, j}) - mx) / 4;
        var += (y.at({i, j}) - mu) * (y.at({i, j}) - mu) / 4;
      }
      CHECK(std::abs(mu) < 1e-12);
      CHECK(std::abs(var - vx / (vx + 1e-5)) < 1e-12);  // eps sits inside the root
    }
  }

  TEST_CASE("softmax") {
    CHECK(ops::softmax(t({2}, {0, 0})).values() == std::vector<double>{0.5, 0.5});
    const auto big = ops::softmax(t<float>({2}, {1000.0f, 0.0f}));
    CHECK(std::isfinite(big.values()[0]));
    CHECK(big.values()[0] == doctest::Approx(1.0));
    CHECK(big.values()[1] == doctest::Approx(0.0));
    Rng rng(5);
    const auto y = ops::softmax(randn(rng, {3, 7}));
    for (int i = 0; i < 3; ++i) {
      double s = 0;
      for (int j = 0; j < 7; ++j) {
        CHECK(y.at({i, j}) >= 0.0);
        s += y.at({i, j});
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }

  TEST_CASE("gelu, sigmoid and log values") {
    const std::vector<double> xs{-3, -0.5, 0, 0.25, 2};
    const auto gl = ops::gelu(t({5}, xs)), sg = ops::sigmoid(t({5}, xs));
    for (int i = 0; i < 5; ++i) {
      CHECK(gl.values()[i] == doctest::Approx(oracle::gelu(xs[i])).epsilon(1e-12));
      CHECK(sg.values()[i] == doctest::Approx(1.0 / (1.0 + std::exp(-xs[i]))).epsilon(1e-12));
    }
    CHECK(ops::log(t({1}, {std::exp(1.5)})).item() == doctest::Approx(1.5));
    CHECK(ops::clamp(t({3}, {-2, 0.5, 9}), -1.0, 1.0).values() == std::vector<double>{-1, 0.5, 1});
  }

  TEST_CASE("upsample2x_bilinear") {
    const auto c = ops::upsample2x_bilinear(Tensor<double>::full({1, 2, 3, 2}, 3.0));
    CHECK(c.shape() == Shape{1, 2, 6, 4});
    for (double v : c.values()) CHECK(v == 3.0);
    CHECK(ops::upsample2x_bilinear(t({1, 1, 1, 1}, {4.5})).values() == std::vector<double>{4.5, 4.5, 4.5, 4.5});
    // Half-pixel centers: output x = 0..3 samples input x = -0.25, 0.25, 0.75, 1.25.
    const auto r = ops::upsample2x_bilinear(t({1, 1, 2, 2}, {0, 1, 2, 3}));
    CHECK(r.at({0, 0, 0, 0}) == 0.0);
    CHECK(r.at({0, 0, 0, 1}) == 0.25);
    CHECK(r.at({0, 0, 0, 2}) == 0.75);
    CHECK(r.at({0, 0, 0, 3}) == 1.0);
    CHECK(r.at({0, 0, 1, 1}) == doctest::Approx(0.75));
  }

  TEST_CASE("concat, reshape, transpose and grid views") {
    const auto a = Tensor<double>::zeros({2, 3}), b = Tensor<double>::full({2, 5}, 1.0);
    CHECK(ops::concat(std::vector{a, b}, 1).shape() == Shape{2, 8});
    CHECK_THROWS_AS(ops::concat(std::vector{a, b}, 0), DimensionError);
    CHECK_THROWS_AS(ops::reshape(a, {4, 2}), DimensionError);
    const auto x = t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(ops::transpose(x, 0, 1).values() == std::vector<double>{1, 4, 2, 5, 3, 6});
    Rng rng(6);
    const auto img = randn(rng, {2, 3, 4, 5});
    const auto tokens = ops::flatten_grid(img);
    CHECK(tokens.shape() == Shape{2, 20, 3});
    CHECK(tokens.at({1, 7, 2}) == img.at({1, 2, 1, 2}));
    CHECK(ops::unflatten_grid(tokens, 4, 5).values() == img.values());
    CHECK_THROWS_AS(ops::unflatten_grid(tokens, 3, 5), DimensionError);
  }

  TEST_CASE("add_bias, affine, sum and mean") {
    CHECK(ops::add_bias(t({2, 2}, {1, 2, 3, 4}), t({2}, {10, 20})).values() == std::vector<double>{11, 22, 13, 24});
    CHECK(ops::affine(t({2}, {1, -1}), 2.0, 0.5).values() == std::vector<double>{2.5, -1.5});
    CHECK(ops::sum(t({3}, {1, 2, 3})).item() == 6.0);
    CHECK(ops::mean(t({4}, {1, 2, 3, 6})).item() == 3.0);
    CHECK_THROWS_AS(ops::add(t({2}, {1, 2}), t({3}, {1, 2, 3})), DimensionError);
  }

  TEST_CASE("forward ops are deterministic") {
    Rng rng(7);
    const auto x = randn(rng, {1, 3, 9, 9}), w = randn(rng, {4, 3, 3, 3});
    const auto a = ops::conv2d(x, w, {}, {2, 1, 1}), b = ops::conv2d(x, w, {}, {2, 1, 1});
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0);
  }
}
