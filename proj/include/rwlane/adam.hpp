#ifndef RWLANE_ADAM_HPP
#define RWLANE_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "rwlane/errors.hpp"
#include "rwlane/params.hpp"

namespace rwlane {

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// One bias-corrected Adam update over every parameter that carries a
/// gradient. Parameters without a gradient are left untouched (their
/// moments too). Moments are kept in double regardless of T.
template <class T>
void adam_step(ParameterStore<T>& params, AdamState& state) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (const auto& name : params.names()) {
    Tensor<T>& p = params.at(name);
    if (!p.has_grad()) continue;
    if (p.grad.size() != p.data.size()) {
      throw DimensionError("adam_step: gradient of '" + name + "' has wrong size");
    }
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(p.size(), 0.0);
      v.assign(p.size(), 0.0);
    } else if (m.size() != p.size()) {
      throw DimensionError("adam_step: moment shape mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]);
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.data[i] = static_cast<T>(static_cast<double>(p.data[i]) -
                                 state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace rwlane

#endif  // RWLANE_ADAM_HPP
