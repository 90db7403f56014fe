#ifndef RWLANE_GRADCHECK_HPP
#define RWLANE_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "rwlane/errors.hpp"
#include "rwlane/params.hpp"
#include "rwlane/rng.hpp"
#include "rwlane/tape.hpp"

namespace rwlane {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
};

struct GradCheckOptions {
  double h = 1e-5;
  /// Per-tensor cap on checked coordinates (0 = all). Sampled coordinates
  /// are drawn from a fixed-seed generator.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 7;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. The error per coordinate is
///   |analytic - numeric| / max(1, |numeric|),
/// and the maximum over all checked coordinates is returned.
///
/// `f(tape, params)` must build the scalar deterministically from `params`.
template <class F>
GradCheckReport finite_diff_check(F&& f, ParameterStore<double>& params,
                                  const GradCheckOptions& opt = {}) {
  for (const auto& name : params.names()) {
    if (!params.at(name).all_finite()) {
      throw NumericError("gradcheck: parameter '" + name + "' holds non-finite values");
    }
  }
  params.clear_grads();
  {
    Tape<double> tape;
    auto out = f(tape, params);
    if (!std::isfinite(out.item())) throw NumericError("gradcheck: non-finite function value");
    tape.backward(out);
  }
  auto eval = [&] {
    Tape<double> tape(false);
    return f(tape, params).item();
  };

  GradCheckReport report;
  Rng rng(opt.seed);
  for (const auto& name : params.names()) {
    Tensor<double>& p = params.at(name);
    std::vector<std::size_t> coords(p.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_per_tensor && coords.size() > opt.max_per_tensor) {
      rng.shuffle(std::span<std::size_t>(coords));
      coords.resize(opt.max_per_tensor);
    }
    for (std::size_t i : coords) {
      const double analytic = p.has_grad() ? p.grad[i] : 0.0;
      const double saved = p.data[i];
      p.data[i] = saved + opt.h;
      const double up = eval();
      p.data[i] = saved - opt.h;
      const double down = eval();
      p.data[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.h);
      if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
        throw NumericError("gradcheck: non-finite derivative for parameter '" + name +
                           "' at index " + std::to_string(i));
      }
      const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      ++report.coordinates_checked;
      if (report.worst_param.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_param = name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace rwlane

#endif  // RWLANE_GRADCHECK_HPP
