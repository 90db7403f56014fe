#ifndef RWLANE_TEST_HELPERS_HPP
#define RWLANE_TEST_HELPERS_HPP

#include <cmath>
#include <string>
#include <vector>

#include "rwlane/config.hpp"
#include "rwlane/ops.hpp"
#include "rwlane/params.hpp"
#include "rwlane/rng.hpp"
#include "rwlane/tape.hpp"

namespace rwlane::testing {

/// Small grid used by the gradient and oracle tests: H=6, W=8, N_cls=2,
/// C_head=8.
inline RunConfig toy_config() {
  RunConfig cfg;
  cfg.grid.x_min = 0.0;
  cfg.grid.x_max = 6.0;
  cfg.grid.y_min = -4.0;
  cfg.grid.y_max = 4.0;
  cfg.grid.H_BEV = 6;
  cfg.grid.W_BEV = 8;
  cfg.grid.C_BEV = 4;
  cfg.grid.max_points_per_cell = 3;
  cfg.backbone.depth = 1;
  cfg.backbone.C_head = 8;
  cfg.backbone.embed_dim = 8;
  cfg.backbone.heads = 2;
  cfg.backbone.ffn_mult = 2;
  cfg.head.N_cls = 2;
  cfg.head.hidden = 6;
  cfg.refine.W_thick = 3;
  cfg.refine.heads = 2;
  cfg.refine.ffn_mult = 2;
  cfg.scene.n_lanes_max = 2;
  cfg.scene.n_occluders_max = 1;
  cfg.scene.occluder_length_min = 1.0;
  cfg.scene.occluder_length_max = 1.5;
  cfg.scene.occluder_width_min = 0.5;
  cfg.scene.occluder_width_max = 0.8;
  cfg.sync_scene_to_grid();
  return cfg;
}

/// Fixed pseudo-random weights so that sum(w * y) has non-degenerate
/// derivatives in every output entry.
template <class T>
Var<T> weighted_sum(Var<T> y, std::uint64_t seed = 99) {
  Tape<T>& t = *y.tape;
  Rng rng(seed);
  std::vector<T> w(numel(y.shape()));
  for (auto& v : w) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return ops::sum(ops::mul(y, t.constant(Tensor<T>(y.shape(), std::move(w)))));
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.normal(0.0, scale);
  return t;
}

/// Perturbs every parameter away from its init (zero biases, unit LN gains)
/// so gradient checks are not run at a special point.
inline void jitter(ParameterStore<double>& store, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (const auto& name : store.names())
    for (auto& v : store.at(name).data) v += rng.normal(0.0, scale);
}

}  // namespace rwlane::testing

#endif  // RWLANE_TEST_HELPERS_HPP
