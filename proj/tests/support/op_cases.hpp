#pragma once
// Gradient-check cases: every differentiable op on three or more shapes,
// plus the composite layers built on them.

#include <type_traits>
#include <vector>

#include "gradcheck.hpp"
#include "mstaf/attention.hpp"
#include "mstaf/decoder.hpp"
#include "mstaf/ops.hpp"

namespace gradcheck {

template <typename X>
using elem_t = typename std::decay_t<X>::value_type::value_type;

inline std::vector<Case> op_cases() {
  namespace ops = mstaf::ops;
  using D = Domain;
  std::vector<Case> c;
  const auto mm = [](bool ta, bool tb) {
    return [ta, tb](const auto& x) { return ops::matmul(x[0], x[1], ta, tb); };
  };
  c.push_back(make_case("matmul", {{2, 3}, {3, 4}}, mm(false, false)));
  c.push_back(make_case("matmul", {{1, 5}, {5, 1}}, mm(false, false)));
  c.push_back(make_case("matmul batched", {{2, 3, 4}, {2, 4, 2}}, mm(false, false)));
  c.push_back(make_case("matmul trans_a", {{3, 2}, {3, 4}}, mm(true, false)));
  c.push_back(make_case("matmul trans_b batched", {{2, 2, 3}, {2, 4, 3}}, mm(false, true)));

  const auto lin = [](const auto& x) { return ops::linear(x[0], x[1], x.size() > 2 ? x[2] : mstaf::Tensor<elem_t<decltype(x)>>{}); };
  c.push_back(make_case("linear", {{2, 3, 4}, {4, 5}, {5}}, lin));
  c.push_back(make_case("linear", {{5, 3}, {3, 2}, {2}}, lin));
  c.push_back(make_case("linear no bias", {{1, 1, 2}, {2, 3}}, lin));

  const auto conv = [](int stride, int pad, int groups) {
    return [=](const auto& x) {
      return ops::conv2d(x[0], x[1], x.size() > 2 ? x[2] : mstaf::Tensor<elem_t<decltype(x)>>{}, {stride, pad, groups});
    };
  };
  c.push_back(make_case("conv2d s1p1", {{1, 2, 5, 5}, {3, 2, 3, 3}, {3}}, conv(1, 1, 1)));
  c.push_back(make_case("conv2d s2p1", {{2, 3, 6, 6}, {4, 3, 3, 3}, {4}}, conv(2, 1, 1)));
  c.push_back(make_case("conv2d depthwise", {{1, 4, 4, 4}, {4, 1, 3, 3}, {4}}, conv(1, 1, 4)));
  c.push_back(make_case("conv2d k7s4p3", {{1, 3, 8, 8}, {2, 3, 7, 7}}, conv(4, 3, 1)));
  c.push_back(make_case("conv2d 1x1 odd", {{1, 3, 3, 5}, {2, 3, 1, 1}, {2}}, conv(1, 0, 1)));

  const auto ln = [](const auto& x) { return ops::layer_norm(x[0], x[1], x[2]); };
  c.push_back(make_case("layer_norm", {{3, 4}, {4}, {4}}, ln));
  c.push_back(make_case("layer_norm", {{2, 3, 5}, {5}, {5}}, ln));
  c.push_back(make_case("layer_norm", {{1, 8}, {8}, {8}}, ln));

  const auto sm = [](std::int64_t axis) { return [axis](const auto& x) { return ops::softmax(x[0], axis); }; };
  c.push_back(make_case("softmax last", {{3, 4}}, sm(-1)));
  c.push_back(make_case("softmax middle", {{2, 3, 4}}, sm(1)));
  c.push_back(make_case("softmax 1d", {{5}}, sm(0)));

  for (const mstaf::Shape& s : {mstaf::Shape{7}, mstaf::Shape{2, 3}, mstaf::Shape{2, 2, 3}}) {
    c.push_back(make_case("gelu", {s}, [](const auto& x) { return ops::gelu(x[0]); }));
    c.push_back(make_case("sigmoid", {s}, [](const auto& x) { return ops::sigmoid(x[0]); }));
    c.push_back(make_case("log", {s}, [](const auto& x) { return ops::log(x[0]); }, D::positive));
    c.push_back(make_case(
        "clamp", {s},
        [](const auto& x) {
          using T = elem_t<decltype(x)>;
          return ops::clamp(x[0], T(-1), T(1));
        },
        D::away_from_unit));
    c.push_back(make_case("add", {s, s}, [](const auto& x) { return ops::add(x[0], x[1]); }));
    c.push_back(make_case("sub", {s, s}, [](const auto& x) { return ops::sub(x[0], x[1]); }));
    c.push_back(make_case("mul", {s, s}, [](const auto& x) { return ops::mul(x[0], x[1]); }));
    c.push_back(make_case("affine", {s}, [](const auto& x) {
      using T = elem_t<decltype(x)>;
      return ops::affine(x[0], T(-1.5), T(0.25));
    }));
    c.push_back(make_case("sum", {s}, [](const auto& x) { return ops::sum(x[0]); }));
    c.push_back(make_case("mean", {s}, [](const auto& x) { return ops::mean(x[0]); }));
  }
  // Fan-out: the same leaf reaches the output along two paths.
  c.push_back(make_case("fan-out x*x+x", {{4}}, [](const auto& x) { return ops::add(ops::mul(x[0], x[0]), x[0]); }));

  const auto bias = [](const auto& x) { return ops::add_bias(x[0], x[1]); };
  c.push_back(make_case("add_bias", {{2, 3}, {3}}, bias));
  c.push_back(make_case("add_bias", {{2, 2, 4}, {4}}, bias));
  c.push_back(make_case("add_bias", {{1, 5}, {5}}, bias));

  const auto cat = [](std::int64_t axis) { return [axis](const auto& x) { return ops::concat(x, axis); }; };
  c.push_back(make_case("concat axis1", {{2, 3}, {2, 5}}, cat(1)));
  c.push_back(make_case("concat axis0", {{1, 3}, {2, 3}}, cat(0)));
  c.push_back(make_case("concat 3 parts", {{1, 2, 2}, {1, 2, 1}, {1, 2, 3}}, cat(2)));

  const auto rs = [](mstaf::Shape to) { return [to](const auto& x) { return ops::reshape(x[0], to); }; };
  c.push_back(make_case("reshape", {{2, 3}}, rs({3, 2})));
  c.push_back(make_case("reshape", {{2, 2, 3}}, rs({4, 3})));
  c.push_back(make_case("reshape", {{6}}, rs({1, 2, 3})));

  const auto tr = [](std::int64_t a, std::int64_t b) {
    return [a, b](const auto& x) { return ops::transpose(x[0], a, b); };
  };
  c.push_back(make_case("transpose", {{2, 3}}, tr(0, 1)));
  c.push_back(make_case("transpose", {{2, 3, 4}}, tr(1, 2)));
  c.push_back(make_case("transpose", {{2, 3, 4}}, tr(0, 2)));

  const auto fl = [](const auto& x) { return ops::flatten_grid(x[0]); };
  c.push_back(make_case("flatten_grid", {{1, 2, 3, 3}}, fl));
  c.push_back(make_case("flatten_grid", {{2, 3, 2, 4}}, fl));
  c.push_back(make_case("flatten_grid", {{2, 4, 1, 3}}, fl));

  const auto ufl = [](std::int64_t h, std::int64_t w) {
    return [h, w](const auto& x) { return ops::unflatten_grid(x[0], h, w); };
  };
  c.push_back(make_case("unflatten_grid", {{1, 6, 2}}, ufl(2, 3)));
  c.push_back(make_case("unflatten_grid", {{2, 4, 3}}, ufl(2, 2)));
  c.push_back(make_case("unflatten_grid", {{1, 5, 2}}, ufl(1, 5)));

  const auto up = [](const auto& x) { return ops::upsample2x_bilinear(x[0]); };
  c.push_back(make_case("upsample2x", {{1, 1, 1, 1}}, up));
  c.push_back(make_case("upsample2x", {{1, 2, 3, 3}}, up));
  c.push_back(make_case("upsample2x", {{2, 1, 2, 4}}, up));
  return c;
}

// Layers assembled from the ops.
inline std::vector<Case> layer_cases() {
  namespace ops = mstaf::ops;
  std::vector<Case> c;
  const auto att = [](const auto& x) { return mstaf::attention(x[0], x[1], x[2], 2.0); };
  c.push_back(make_case("attention", {{1, 2, 2}, {1, 2, 2}, {1, 2, 2}}, att));
  c.push_back(make_case("attention", {{2, 3, 4}, {2, 5, 4}, {2, 5, 3}}, att));
  c.push_back(make_case("attention", {{1, 4, 2}, {1, 7, 2}, {1, 7, 2}}, att));

  const auto ffn = [](std::int64_t h, std::int64_t w) {
    return [h, w](const auto& x) {
      using T = elem_t<decltype(x)>;
      mstaf::MixFfnParams<T> p{x[1], x[2], x[3], x[4], x[5], x[6]};
      return mstaf::mix_ffn(x[0], h, w, p);
    };
  };
  c.push_back(make_case("mix_ffn 2x2", {{1, 4, 2}, {2, 4}, {4}, {4, 1, 3, 3}, {4}, {4, 2}, {2}}, ffn(2, 2)));
  c.push_back(make_case("mix_ffn 2x3", {{2, 6, 2}, {2, 3}, {3}, {3, 1, 3, 3}, {3}, {3, 2}, {2}}, ffn(2, 3)));
  c.push_back(make_case("mix_ffn 3x1", {{1, 3, 3}, {3, 6}, {6}, {6, 1, 3, 3}, {6}, {6, 3}, {3}}, ffn(3, 1)));

  // BCE over sigmoid(x) against a fixed 0/1 pattern.
  const auto bce = [](const auto& x) {
    using T = elem_t<decltype(x)>;
    std::vector<T> g(static_cast<std::size_t>(x[0].numel()));
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = T((i * 7 + 3) % 3 == 0);
    return mstaf::bce_loss(ops::sigmoid(x[0]), mstaf::Tensor<T>::from_data(x[0].shape(), g));
  };
  c.push_back(make_case("bce_loss", {{1, 1, 2, 2}}, bce));
  c.push_back(make_case("bce_loss", {{2, 1, 3, 3}}, bce));
  c.push_back(make_case("bce_loss", {{1, 1, 4, 2}}, bce));
  return c;
}

}  // namespace gradcheck
