#pragma once

#include <cmath>
#include <vector>

#include "mstaf/kernels/kernels.hpp"
#include "mstaf/params.hpp"

namespace mstaf {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment buffers are zero-initialized and sized
// from the store on first use. A parameter with no accumulated grad takes a
// zero-gradient step.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  void step(ParamStore<T>& params) {
    auto& entries = params.entries();
    if (m_.empty()) {
      for (const auto& [_, t] : entries) {
        m_.emplace_back(t.values().size(), T(0));
        v_.emplace_back(t.values().size(), T(0));
      }
    }
    if (m_.size() != entries.size()) throw UsageError("Adam: parameter set changed between steps");
    ++step_;
    const T bc1 = static_cast<T>(1.0 - std::pow(opts_.beta1, static_cast<double>(step_)));
    const T bc2 = static_cast<T>(1.0 - std::pow(opts_.beta2, static_cast<double>(step_)));
    const auto& k = kernels::active<T>();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& t = entries[i].second;
      if (m_[i].size() != t.values().size()) throw UsageError("Adam: shape changed for " + entries[i].first);
      k.adam(t.numel(), t.mutable_data().data(), t.grad_buffer().data(), m_[i].data(), v_[i].data(),
             static_cast<T>(opts_.lr), static_cast<T>(opts_.beta1), static_cast<T>(opts_.beta2),
             static_cast<T>(opts_.eps), bc1, bc2);
    }
  }

  long step_count() const { return step_; }
  const AdamOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }

 private:
  AdamOptions opts_;
  long step_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace mstaf
