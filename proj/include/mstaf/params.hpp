#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mstaf/error.hpp"
#include "mstaf/tensor.hpp"

namespace mstaf {

// Insertion-ordered named parameter set. Every tensor requires grad.
template <typename T>
class ParamStore {
 public:
  using Entry = std::pair<std::string, Tensor<T>>;

  Tensor<T>& add(std::string name, Tensor<T> tensor) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    tensor.set_requires_grad(true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(tensor));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].second;
  }
  Tensor<T>& get(const std::string& name) {
    return const_cast<Tensor<T>&>(static_cast<const ParamStore&>(*this).get(name));
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::int64_t parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  // Deep copy with values converted to U; the copy has no grads.
  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, t] : entries_) {
      std::vector<U> data(t.data().begin(), t.data().end());
      out.add(name, Tensor<U>::from_data(t.shape(), std::move(data)));
    }
    return out;
  }

  ParamStore clone() const { return cast<T>(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mstaf
