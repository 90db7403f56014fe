#ifndef RWLANE_PARAMS_HPP
#define RWLANE_PARAMS_HPP

#include <concepts>
#include <map>
#include <string>
#include <vector>

#include "rwlane/errors.hpp"
#include "rwlane/rng.hpp"
#include "rwlane/tape.hpp"
#include "rwlane/tensor.hpp"

namespace rwlane {

/// Named trainable tensors in registration order. References returned by
/// `at` stay valid for the lifetime of the store.
template <std::floating_point T>
class ParameterStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    if (tensors_.contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
    value.requires_grad = true;
    order_.push_back(name);
    return tensors_.emplace(name, std::move(value)).first->second;
  }

  /// Weights ~ normal(0, stddev) drawn from `rng`.
  Tensor<T>& add_normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, stddev));
    return add(name, std::move(t));
  }

  Tensor<T>& add_constant(const std::string& name, Shape shape, T value) {
    return add(name, Tensor<T>(std::move(shape), value));
  }

  bool contains(const std::string& name) const { return tensors_.contains(name); }

  Tensor<T>& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  /// Leaf node for a parameter on `tape`.
  Var<T> var(Tape<T>& tape, const std::string& name) { return tape.param(at(name)); }

  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : tensors_) n += t.size();
    return n;
  }

  void clear_grads() {
    for (auto& [_, t] : tensors_) t.clear_grad();
  }

  template <std::floating_point U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (const auto& name : order_) out.add(name, at(name).template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Tensor<T>> tensors_;
};

}  // namespace rwlane

#endif  // RWLANE_PARAMS_HPP
