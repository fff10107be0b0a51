#include <cmath>
#include <cstring>

#include "criteria.hpp"
#include "doctest.h"
#include "mstaf/block.hpp"
#include "mstaf/decoder.hpp"
#include "mstaf/error.hpp"
#include "mstaf/ops.hpp"
#include "mstaf/rng.hpp"

using namespace mstaf;

namespace {

Tensor<double> randn(Rng& rng, Shape s, double sd = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(s)));
  for (auto& x : v) x = rng.normal() * sd;
  return Tensor<double>::from_data(std::move(s), std::move(v));
}

Tensor<double> zeros(Shape s) { return Tensor<double>::zeros(std::move(s)); }

MixFfnParams<double> zero_ffn(std::int64_t c, std::int64_t r = 4) {
  return {zeros({c, r * c}), zeros({r * c}), zeros({r * c, 1, 3, 3}), zeros({r * c}), zeros({r * c, c}), zeros({c})};
}

bool bit_equal(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

}  // namespace

TEST_SUITE("layers") {
  TEST_CASE("patch embedding grids") {
    const auto s1 = PatchEmbedConfig::for_stage(1, 3, 64);
    CHECK(s1.kernel == 7);
    CHECK(s1.stride == 4);
    CHECK(s1.padding == 3);
    CHECK(s1.output_grid(256, 256) == std::pair<std::int64_t, std::int64_t>{64, 64});
    const auto s2 = PatchEmbedConfig::for_stage(2, 64, 128);
    CHECK(s2.output_grid(64, 64) == std::pair<std::int64_t, std::int64_t>{32, 32});

    Rng rng(1);
    const auto cfg = PatchEmbedConfig::for_stage(1, 3, 8);
    PatchEmbedParams<double> p{randn(rng, {8, 3, 7, 7}, 0.1), zeros({8}), Tensor<double>::full({8}, 1.0), zeros({8})};
    const auto grid = embed(randn(rng, {2, 3, 64, 64}), cfg, p);
    CHECK(grid.count() == 256);
    CHECK(grid.h == 16);
    CHECK(grid.channels() == 8);
    // Lossless grid round trip.
    CHECK(TokenGrid<double>::from_image(grid.to_image()).tokens.values() == grid.tokens.values());
  }

  TEST_CASE("patch embedding config errors") {
    CHECK_THROWS_AS((PatchEmbedConfig{3, 4, 1, 3, 8}.validate()), ConfigError);  // no overlap
    CHECK_THROWS_AS((PatchEmbedConfig{7, 4, 2, 3, 8}.validate()), ConfigError);  // padding != k/2
    Rng rng(2);
    const PatchEmbedConfig cfg{7, 4, 3, 3, 4};
    PatchEmbedParams<double> p{randn(rng, {4, 3, 7, 7}), zeros({4}), Tensor<double>::full({4}, 1.0), zeros({4})};
    CHECK_THROWS_AS(embed(randn(rng, {1, 3, 0, 0}), cfg, p), Error);
  }

  TEST_CASE("projection examples") {
    Rng rng(3);
    const TokenGrid<double> f{randn(rng, {1, 1, 4}), 1, 1};
    const auto eye = Tensor<double>::from_data({4, 2}, {1, 0, 0, 1, 0, 0, 0, 0});
    const auto pr = project_qkv(f, QkvParams<double>{zeros({4, 2}), eye, eye});
    for (double v : pr.q.values()) CHECK(v == 0.0);
    CHECK(pr.k.values() == std::vector<double>{f.tokens.values()[0], f.tokens.values()[1]});
    CHECK_THROWS_AS(project_qkv(f, QkvParams<double>{zeros({6, 2}), zeros({6, 2}), zeros({6, 2})}), DimensionError);
  }

  TEST_CASE("attention heads") {
    Rng rng(4);
    const std::int64_t c = 8, half = 4;
    QkvParams<double> w{randn(rng, {c, half}), randn(rng, {c, half}), randn(rng, {c, half})};
    const double div = softmax_scale_divisor(SoftmaxScale::sqrt_c, c);

    SUBCASE("identical tokens attend uniformly to identical values") {
      std::vector<double> tok(c);
      for (auto& x : tok) x = rng.normal();
      std::vector<double> all;
      for (int i = 0; i < 6; ++i) all.insert(all.end(), tok.begin(), tok.end());
      const TokenGrid<double> f{Tensor<double>::from_data({1, 6, c}, all), 2, 3};
      const auto pr = project_qkv(f, w);
      const auto out = head_self(pr, div);
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < half; ++j) CHECK(out.at({0, i, j}) == doctest::Approx(pr.v.at({0, 0, j})).epsilon(1e-12));
    }
    SUBCASE("cross equals self for identical images") {
      const TokenGrid<double> f{randn(rng, {2, 6, c}), 2, 3};
      const auto pr = project_qkv(f, w), pr2 = project_qkv(f, w);
      CHECK(bit_equal(head_cross(pr, pr2, div), head_self(pr, div)));
    }
    SUBCASE("zero donor values give zero cross output") {
      const TokenGrid<double> fp{randn(rng, {1, 4, c}), 2, 2}, fd{randn(rng, {1, 9, c}), 3, 3};
      auto pd = project_qkv(fd, w);
      pd.v = zeros({1, 9, half});
      const auto out = head_cross(project_qkv(fp, w), pd, div);
      CHECK(out.shape() == Shape{1, 4, half});
      for (double v : out.values()) CHECK(v == 0.0);
    }
    SUBCASE("softmax scale variants") {
      CHECK(softmax_scale_divisor(SoftmaxScale::sqrt_c, 64) == 8.0);
      CHECK(softmax_scale_divisor(SoftmaxScale::sqrt_half_c, 64) == doctest::Approx(std::sqrt(32.0)));
    }
  }

  TEST_CASE("mix_ffn") {
    const auto out = mix_ffn(zeros({2, 6, 4}), 2, 3, zero_ffn(4));
    CHECK(out.shape() == Shape{2, 6, 4});
    for (double v : out.values()) CHECK(v == 0.0);
    CHECK_THROWS_AS(mix_ffn(zeros({1, 5, 4}), 2, 3, zero_ffn(4)), UsageError);
  }

  TEST_CASE("taa block residual path and errors") {
    Rng rng(5);
    const std::int64_t c = 8;
    TaaParams<double> p;
    p.norm_gamma = zeros({c});
    p.norm_beta = zeros({c});
    p.qkv = QkvParams<double>{zeros({c, c / 2}), zeros({c, c / 2}), zeros({c, c / 2})};
    p.ffn = zero_ffn(c);
    const TokenGrid<double> fp{randn(rng, {1, 6, c}), 2, 3}, fd{randn(rng, {1, 6, c}), 2, 3};
    const auto [op, od] = taa_block(fp, fd, p, BlockOptions{});
    CHECK(op.tokens.values() == fp.tokens.values());
    CHECK(od.tokens.values() == fd.tokens.values());
    CHECK(op.h == 2);
    CHECK(op.w == 3);
    const TokenGrid<double> wrong{randn(rng, {1, 6, 6}), 2, 3};
    CHECK_THROWS_AS(taa_block(fp, wrong, p, BlockOptions{}), DimensionError);
  }

  TEST_CASE("multiscale token counts") {
    MultiScaleConfig cfg;
    std::int64_t rows = 0;
    for (int b = 0; b < 3; ++b) {
      const auto [h, w] = cfg.branch_grid(b, 64, 64);
      rows += h * w;
    }
    CHECK(rows == 5376);
    CHECK(cfg.branch_grid(0, 64, 64).first * cfg.branch_grid(0, 64, 64).second == 4096);

    Rng rng(6);
    const std::int64_t c = 4;
    MultiScaleConfig ones;
    ones.branches = {{{1, 1, 0}, {1, 1, 0}, {1, 1, 0}}};
    MultiScaleParams<double> p;
    for (int i = 0; i < 3; ++i) {
      p.conv_w[i] = randn(rng, {c / 2, c, 1, 1});
      p.conv_b[i] = zeros({c / 2});
    }
    p.wq = p.wk = p.wv = randn(rng, {c / 2, c / 2});
    const auto pr = project_multiscale(TokenGrid<double>{randn(rng, {1, 1, c}), 1, 1}, ones, p);
    CHECK(pr.q.shape() == Shape{1, 1, c / 2});
    CHECK(pr.k.shape() == Shape{1, 3, c / 2});
    CHECK(pr.v.shape() == Shape{1, 3, c / 2});

    MultiScaleConfig bad;
    bad.branches[0] = {3, 2, 1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    MultiScaleConfig unpadded;
    unpadded.branches[2] = {5, 4, 0};
    CHECK_NOTHROW(unpadded.validate_for_grid(8, 8));
    CHECK_THROWS_AS(unpadded.validate_for_grid(2, 2), ConfigError);
  }

  TEST_CASE("brute-force oracles and multiscale degeneracy") {
    const auto bf = criteria::brute_force_oracles();
    INFO(bf.detail);
    CHECK(bf.pass);
    const auto md = criteria::multiscale_degeneracy();
    INFO(md.detail);
    CHECK(md.pass);
  }

  TEST_CASE("decoder") {
    CHECK(decoder_levels(16, 256) == 4);
    CHECK(decoder_levels(4, 64) == 4);
    CHECK(decoder_levels(8, 8) == 0);
    CHECK_THROWS_AS(decoder_levels(16, 200), ConfigError);
    CHECK_THROWS_AS(decoder_levels(16, 8), ConfigError);

    Rng rng(7);
    DecoderParams<double> p;
    std::int64_t prev = 8;
    for (std::int64_t w : {6, 4}) {
      p.conv_w.push_back(randn(rng, {w, prev, 3, 3}, 0.3));
      p.conv_b.push_back(randn(rng, {w}, 0.1));
      prev = w;
    }
    p.head_w = randn(rng, {1, prev, 1, 1});
    p.head_b = zeros({1});
    const auto m = decode(TokenGrid<double>{randn(rng, {2, 9, 8}), 3, 3}, p, 12, 12);
    CHECK(m.shape() == Shape{2, 1, 12, 12});
    for (double v : m.values()) CHECK((v > 0.0 && v < 1.0));
    CHECK_THROWS_AS(decode(TokenGrid<double>{randn(rng, {2, 9, 8}), 3, 3}, p, 24, 24), ConfigError);
  }

  TEST_CASE("bce examples") {
    const auto half = Tensor<double>::full({1, 1, 2, 3}, 0.5);
    const auto g = Tensor<double>::from_data({1, 1, 2, 3}, {1, 0, 0, 1, 1, 0});
    CHECK(bce_loss(half, g).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(bce_loss(g, g).item() <= -std::log(1 - kBceClampEps) + 1e-12);
    CHECK(bce_loss(g, g).item() >= 0.0);
    const auto m = Tensor<double>::from_data({1, 1, 1, 2}, {0.9, 0.2});
    const auto gt = Tensor<double>::from_data({1, 1, 1, 2}, {1, 0});
    CHECK(bce_loss(m, gt).item() == doctest::Approx(0.164252).epsilon(1e-6));
    CHECK(bce_loss(m, gt).item() == doctest::Approx(-(std::log(0.9) + std::log(0.8)) / 2).epsilon(1e-12));
    CHECK_THROWS_AS(bce_loss(half, gt), DimensionError);
    CHECK(pair_bce_loss(m, gt, half.detach(), g).item() ==
          doctest::Approx((bce_loss(m, gt).item() + std::log(2.0)) / 2));
  }
}
