#ifndef RWLANE_TAPE_HPP
#define RWLANE_TAPE_HPP

#include <algorithm>
#include <cassert>
#include <concepts>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rwlane/errors.hpp"
#include "rwlane/tensor.hpp"

namespace rwlane {

template <std::floating_point T>
class Tape;

/// Handle to a node recorded on a Tape.
template <std::floating_point T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Shape& shape() const { return tape->shape(id); }
  std::size_t size() const { return tape->value(id).size(); }
  std::span<const T> value() const { return tape->value(id); }
  T item() const { return tape->value(id)[0]; }
  Tensor<T> to_tensor() const {
    auto v = value();
    return Tensor<T>(shape(), std::vector<T>(v.begin(), v.end()));
  }
};

/// Multiply-accumulate tally, bucketed by the scope active when the
/// primitive ran. Only primitives with a MAC structure report.
class FlopTally {
 public:
  void add(std::uint64_t n) { by_scope_[scope_] += n; }
  void set_scope(std::string scope) { scope_ = std::move(scope); }
  const std::string& scope() const { return scope_; }
  const std::map<std::string, std::uint64_t>& by_scope() const { return by_scope_; }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& [_, n] : by_scope_) t += n;
    return t;
  }

 private:
  std::string scope_ = "other";
  std::map<std::string, std::uint64_t> by_scope_;
};

/// Record of executed primitives. Backward replays the recorded closures
/// in exact reverse order. Parameter leaves reference caller-owned
/// tensors; their gradients are added into `Tensor::grad` so a parameter
/// used several times receives the sum over all uses.
///
/// A tape constructed with `record = false` runs forward only and keeps
/// no closures.
template <std::floating_point T>
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> t) { return emplace(std::move(t.shape), std::move(t.data), false); }
  Var<T> constant(Shape shape, std::vector<T> data) {
    return emplace(std::move(shape), std::move(data), false);
  }

  Var<T> param(Tensor<T>& p) {
    Node n;
    n.shape = p.shape;
    n.param = &p;
    n.requires_grad = record_ && p.requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  Var<T> emplace(Shape shape, std::vector<T> data, bool requires_grad) {
    if (data.size() != numel(shape)) {
      throw DimensionError("node data size " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(data);
    n.requires_grad = record_ && requires_grad;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
  }

  void on_backward(Var<T> out, std::function<void()> fn) {
    if (record_ && nodes_[out.id].requires_grad) nodes_[out.id].backward = std::move(fn);
  }

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  std::span<const T> value(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.param) return n.param->data;
    return n.value;
  }

  std::span<T> mutable_value(std::size_t id) {
    assert(!nodes_[id].param);
    return nodes_[id].value;
  }

  /// Gradient buffer of a node, zero-initialized on first access.
  std::span<T> grad(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(numel(n.shape), T{0});
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  void backward(Var<T> loss) {
    if (!record_) throw std::logic_error("backward on a non-recording tape");
    if (numel(shape(loss.id)) != 1) {
      throw DimensionError("backward needs a scalar, got " + shape_str(shape(loss.id)));
    }
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss.id)[0] += T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward();
      if (n.param) {
        Tensor<T>& p = *n.param;
        if (p.grad.empty()) p.grad.assign(p.data.size(), T{0});
        for (std::size_t k = 0; k < n.grad.size(); ++k) p.grad[k] += n.grad[k];
      }
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

  FlopTally& flops() { return flops_; }
  const FlopTally& flops() const { return flops_; }

 private:
  struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    Tensor<T>* param = nullptr;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  bool record_;
  std::vector<Node> nodes_;
  FlopTally flops_;
};

/// Sets the flop-tally scope for the lifetime of the guard.
template <std::floating_point T>
class FlopScope {
 public:
  FlopScope(Tape<T>& tape, std::string scope) : tally_(tape.flops()), prev_(tally_.scope()) {
    tally_.set_scope(std::move(scope));
  }
  ~FlopScope() { tally_.set_scope(prev_); }
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

 private:
  FlopTally& tally_;
  std::string prev_;
};

}  // namespace rwlane

#endif  // RWLANE_TAPE_HPP
