#pragma once
// Multi-scale projection: three parallel convs over the token grid produce
// token sets at different scales. Queries come from branch 1 only; keys and
// values come from all three branches, stacked along the token axis.

#include <array>

#include "mstaf/attention.hpp"

namespace mstaf {

struct BranchSpec {
  int kernel = 3;
  int stride = 1;
  int padding = 1;
};

struct MultiScaleConfig {
  std::array<BranchSpec, 3> branches{{{3, 1, 1}, {3, 2, 1}, {5, 4, 2}}};

  // Branch 1 must keep the grid, so queries line up with the residual path.
  // Throws ConfigError otherwise.
  void validate() const;
  // Throws ConfigError if some branch collapses an h x w grid to nothing.
  void validate_for_grid(std::int64_t h, std::int64_t w) const;
  std::pair<std::int64_t, std::int64_t> branch_grid(int branch, std::int64_t h, std::int64_t w) const;
};

template <typename T>
struct MultiScaleParams {
  std::array<Tensor<T>, 3> conv_w;  // [C/2, C, k, k]
  std::array<Tensor<T>, 3> conv_b;  // [C/2]
  Tensor<T> wq;                     // [C/2, C/2], shared by the branches
  Tensor<T> wk;
  Tensor<T> wv;
};

template <typename T>
Projection<T> project_multiscale(const TokenGrid<T>& f, const MultiScaleConfig& cfg,
                                 const MultiScaleParams<T>& params);

}  // namespace mstaf
