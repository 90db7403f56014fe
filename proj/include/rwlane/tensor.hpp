#ifndef RWLANE_TENSOR_HPP
#define RWLANE_TENSOR_HPP

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rwlane/errors.hpp"

namespace rwlane {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array. `grad` is empty when no gradient has been
/// accumulated; otherwise it has exactly `data.size()` entries.
template <std::floating_point T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{0}) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape)) {
      throw DimensionError("tensor data has " + std::to_string(data.size()) +
                           " entries but shape " + shape_str(shape) + " needs " +
                           std::to_string(numel(shape)));
    }
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool has_grad() const { return !grad.empty(); }
  void clear_grad() { grad.clear(); }

  std::span<T> values() { return data; }
  std::span<const T> values() const { return data; }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <std::floating_point U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    out.requires_grad = requires_grad;
    return out;
  }
};

}  // namespace rwlane

#endif  // RWLANE_TENSOR_HPP
