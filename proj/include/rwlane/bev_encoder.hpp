#ifndef RWLANE_BEV_ENCODER_HPP
#define RWLANE_BEV_ENCODER_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "rwlane/config.hpp"
#include "rwlane/ops.hpp"
#include "rwlane/params.hpp"
#include "rwlane/scene.hpp"

namespace rwlane {

/// Per-point input width: normalized x, y, z, the extra channels, and the
/// two offsets from the cell centre (in cell units).
inline std::size_t point_feature_width(const GridConfig& g) { return 5 + g.extra_channels; }

/// Dense pillar tensor: max_points_per_cell slots per cell, zero-padded.
/// `segment[slot]` is the owning cell or -1 for padding.
template <class T>
struct PillarInput {
  std::vector<T> features;
  std::vector<std::ptrdiff_t> segment;
  std::size_t slots = 0;
};

/// Bins points into cells, keeping the first `max_points_per_cell` points
/// of each cell in input order. Points outside the grid are dropped.
template <class T>
PillarInput<T> build_pillars(const PointCloud& pc, const GridConfig& g) {
  if (pc.extra_channels != g.extra_channels) {
    throw DimensionError("encode: point cloud has " + std::to_string(pc.extra_channels) +
                         " extra channels, grid expects " + std::to_string(g.extra_channels));
  }
  const std::size_t width = point_feature_width(g);
  const std::size_t cap = g.max_points_per_cell;
  PillarInput<T> in;
  in.slots = g.cells() * cap;
  in.features.assign(in.slots * width, T{0});
  in.segment.assign(in.slots, -1);
  std::vector<std::size_t> fill(g.cells(), 0);
  const double cx = g.cell_x(), cy = g.cell_y();
  for (std::size_t i = 0; i < pc.size(); ++i) {
    const double x = pc.x(i), y = pc.y(i);
    if (!(x >= g.x_min && x < g.x_max && y >= g.y_min && y < g.y_max)) continue;
    const auto h = static_cast<std::size_t>(std::floor((x - g.x_min) / cx));
    const auto w = static_cast<std::size_t>(std::floor((y - g.y_min) / cy));
    if (h >= g.H_BEV || w >= g.W_BEV) continue;
    const std::size_t cell = h * g.W_BEV + w;
    if (fill[cell] == cap) continue;
    const std::size_t slot = cell * cap + fill[cell]++;
    in.segment[slot] = static_cast<std::ptrdiff_t>(cell);
    T* f = in.features.data() + slot * width;
    std::size_t k = 0;
    f[k++] = static_cast<T>((x - g.x_min) / (g.x_max - g.x_min));
    f[k++] = static_cast<T>((y - g.y_min) / (g.y_max - g.y_min));
    f[k++] = static_cast<T>(pc.z(i));
    for (std::size_t e = 0; e < g.extra_channels; ++e) f[k++] = static_cast<T>(pc.point(i)[3 + e]);
    f[k++] = static_cast<T>((x - (g.x_min + (static_cast<double>(h) + 0.5) * cx)) / cx);
    f[k++] = static_cast<T>((y - (g.y_min + (static_cast<double>(w) + 0.5) * cy)) / cy);
  }
  return in;
}

template <class T>
void register_encoder(ParameterStore<T>& store, const GridConfig& g, Rng& rng) {
  store.add_normal("encoder.w", {point_feature_width(g), g.C_BEV}, 0.02, rng);
  store.add_constant("encoder.b", {g.C_BEV}, T{0});
}

/// Pillar encoder: shared affine + ReLU per point, max-pooled per cell.
/// Returns the pseudo-BEV image [C_BEV x H_BEV x W_BEV]; empty cells are
/// exact zeros.
template <class T>
Var<T> encode(Tape<T>& tape, const PointCloud& pc, const GridConfig& g, ParameterStore<T>& store) {
  FlopScope<T> scope(tape, "encoder");
  PillarInput<T> in = build_pillars<T>(pc, g);
  const std::size_t width = point_feature_width(g);
  auto x = tape.constant({in.slots, width}, std::move(in.features));
  auto feats = ops::relu(ops::linear(x, store.var(tape, "encoder.w"), store.var(tape, "encoder.b")));
  auto pooled = ops::segment_max(feats, std::move(in.segment), g.cells());  // [cells x C]
  std::vector<std::ptrdiff_t> idx(g.C_BEV * g.cells());
  for (std::size_t c = 0; c < g.C_BEV; ++c)
    for (std::size_t cell = 0; cell < g.cells(); ++cell)
      idx[c * g.cells() + cell] = static_cast<std::ptrdiff_t>(cell * g.C_BEV + c);
  return ops::gather(pooled, std::move(idx), {g.C_BEV, g.H_BEV, g.W_BEV});
}

inline std::uint64_t encoder_flops(const GridConfig& g) {
  return 2ULL * g.cells() * g.max_points_per_cell * point_feature_width(g) * g.C_BEV;
}

}  // namespace rwlane

#endif  // RWLANE_BEV_ENCODER_HPP
