#ifndef RWLANE_SCENE_HPP
#define RWLANE_SCENE_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rwlane/config.hpp"
#include "rwlane/errors.hpp"
#include "rwlane/rng.hpp"
#include "rwlane/tensor.hpp"

namespace rwlane {

/// Points stored flat as (x, y, z, extra_0 .. extra_{C-1}) in f32.
/// extra_0 is intensity in [0, 1].
struct PointCloud {
  std::size_t extra_channels = 1;
  std::vector<float> values;

  std::size_t stride() const { return 3 + extra_channels; }
  std::size_t size() const { return values.size() / stride(); }
  bool empty() const { return values.empty(); }

  float x(std::size_t i) const { return values[i * stride()]; }
  float y(std::size_t i) const { return values[i * stride() + 1]; }
  float z(std::size_t i) const { return values[i * stride() + 2]; }
  float intensity(std::size_t i) const { return values[i * stride() + 3]; }
  std::span<const float> point(std::size_t i) const {
    return std::span<const float>(values).subspan(i * stride(), stride());
  }

  void push(float x, float y, float z, float intensity) {
    values.insert(values.end(), {x, y, z, intensity});
    for (std::size_t k = 1; k < extra_channels; ++k) values.push_back(0.0f);
  }

  bool valid() const {
    if (values.size() % stride() != 0) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      for (float v : point(i))
        if (!std::isfinite(v)) return false;
      if (intensity(i) < 0.0f || intensity(i) > 1.0f) return false;
    }
    return true;
  }

  bool operator==(const PointCloud&) const = default;
};

/// Ground truth per (class, row): the lane column, or -1 when the lane
/// does not exist on that row. The one-hot existence/location maps are
/// derived views.
struct LaneLabels {
  std::size_t N_cls = 0, H = 0, W = 0;
  std::vector<int> column;
  int occluded_lane_count = 0;

  LaneLabels() = default;
  LaneLabels(std::size_t n_cls, std::size_t h, std::size_t w)
      : N_cls(n_cls), H(h), W(w), column(n_cls * h, -1) {}

  int& col(std::size_t c, std::size_t h) { return column[c * H + h]; }
  int col(std::size_t c, std::size_t h) const { return column[c * H + h]; }
  bool exists(std::size_t c, std::size_t h) const { return column[c * H + h] >= 0; }

  std::size_t existing_rows() const {
    return static_cast<std::size_t>(std::count_if(column.begin(), column.end(),
                                                  [](int v) { return v >= 0; }));
  }

  /// N_cls x H x 2, index 0 = not-exist, 1 = exist.
  Tensor<double> existence_one_hot() const {
    Tensor<double> t({N_cls, H, 2});
    for (std::size_t c = 0; c < N_cls; ++c)
      for (std::size_t h = 0; h < H; ++h) t.at(c, h, exists(c, h) ? 1 : 0) = 1.0;
    return t;
  }

  /// N_cls x H x W, all-zero rows where the lane is absent.
  Tensor<double> location_one_hot() const {
    Tensor<double> t({N_cls, H, W});
    for (std::size_t c = 0; c < N_cls; ++c)
      for (std::size_t h = 0; h < H; ++h)
        if (exists(c, h)) t.at(c, h, static_cast<std::size_t>(col(c, h))) = 1.0;
    return t;
  }

  bool valid() const {
    if (column.size() != N_cls * H) return false;
    for (int v : column)
      if (v < -1 || v >= static_cast<int>(W)) return false;
    return occluded_lane_count >= 0 && occluded_lane_count <= 6;
  }

  bool operator==(const LaneLabels&) const = default;
};

/// y(x) = a x^2 + b x + c, present on rows [row_begin, row_end).
struct LaneCurve {
  std::size_t cls = 0;
  double a = 0.0, b = 0.0, c = 0.0;
  std::size_t row_begin = 0, row_end = 0;

  double y_at(double x) const { return (a * x + b) * x + c; }
};

/// Axis-aligned footprint; every point inside is removed.
struct Occluder {
  double x_lo = 0.0, x_hi = 0.0, y_lo = 0.0, y_hi = 0.0;
  bool contains(double x, double y) const {
    return x >= x_lo && x <= x_hi && y >= y_lo && y <= y_hi;
  }
};

struct Scene {
  PointCloud cloud;
  LaneLabels labels;
  std::vector<LaneCurve> lanes;
  std::vector<Occluder> occluders;
  /// Source lane class of each point, -1 for road/clutter points.
  std::vector<std::int8_t> point_lane;
};

inline int column_of(const SceneConfig& cfg, double y) {
  return static_cast<int>(std::floor((y - cfg.y_min) / cfg.cell_y()));
}

inline double row_center_x(const SceneConfig& cfg, std::size_t h) {
  return cfg.x_min + (static_cast<double>(h) + 0.5) * cfg.cell_x();
}

/// Label raster of the analytic curves (1-cell wide).
inline LaneLabels rasterize_labels(const SceneConfig& cfg, std::span<const LaneCurve> lanes) {
  LaneLabels labels(cfg.N_cls, cfg.H_BEV, cfg.W_BEV);
  for (const auto& lane : lanes) {
    for (std::size_t h = lane.row_begin; h < std::min(lane.row_end, cfg.H_BEV); ++h) {
      const int w = column_of(cfg, lane.y_at(row_center_x(cfg, h)));
      if (w >= 0 && w < static_cast<int>(cfg.W_BEV)) labels.col(lane.cls, h) = w;
    }
  }
  return labels;
}

/// True when consecutive lanes keep >= 2 columns of separation (and their
/// order) on every row where both are labelled.
inline bool lanes_separable(const LaneLabels& labels) {
  for (std::size_t h = 0; h < labels.H; ++h) {
    int prev = -1000;
    for (std::size_t c = 0; c < labels.N_cls; ++c) {
      if (!labels.exists(c, h)) continue;
      const int w = labels.col(c, h);
      if (w - prev < 2) return false;
      prev = w;
    }
  }
  return true;
}

inline bool curve_hits(const SceneConfig& cfg, const LaneCurve& lane, const Occluder& occ) {
  const double x0 = cfg.x_min + static_cast<double>(lane.row_begin) * cfg.cell_x();
  const double x1 = cfg.x_min + static_cast<double>(lane.row_end) * cfg.cell_x();
  const double lo = std::max(x0, occ.x_lo), hi = std::min(x1, occ.x_hi);
  if (lo > hi) return false;
  const int steps = std::max(1, static_cast<int>(std::ceil((hi - lo) / 0.02)));
  for (int i = 0; i <= steps; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / steps;
    const double y = lane.y_at(x);
    if (y >= cfg.y_min && y < cfg.y_max && occ.contains(x, y)) return true;
  }
  return false;
}

/// Samples points for given lanes and occluders. Labels come from the
/// curves and are unaffected by occluders; occluders only delete points.
inline Scene render_scene(const SceneConfig& cfg, std::vector<LaneCurve> lanes,
                          std::vector<Occluder> occluders, Rng& rng) {
  Scene scene;
  scene.labels = rasterize_labels(cfg, lanes);
  const double cx = cfg.cell_x();

  struct Raw {
    double x, y, z, intensity;
    int lane;
  };
  std::vector<Raw> raw;
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };

  for (const auto& lane : lanes) {
    const double x0 = cfg.x_min + static_cast<double>(lane.row_begin) * cx;
    const double x1 = cfg.x_min + static_cast<double>(lane.row_end) * cx;
    const auto n = static_cast<std::size_t>(std::llround(cfg.lane_density * (x1 - x0)));
    for (std::size_t i = 0; i < n; ++i) {
      const double x = rng.uniform(x0, x1);
      const double y = lane.y_at(x) + std::clamp(rng.normal(0.0, 0.04), -0.1, 0.1);
      const double z = rng.normal(0.0, 0.02);
      const double it = clamp01(rng.normal(cfg.lane_intensity_mean, cfg.lane_intensity_std));
      const auto h = static_cast<std::size_t>(std::floor((x - cfg.x_min) / cx));
      if (h >= cfg.H_BEV || !scene.labels.exists(lane.cls, h)) continue;
      if (y < cfg.y_min || y >= cfg.y_max) continue;
      raw.push_back({x, y, z, it, static_cast<int>(lane.cls)});
    }
  }
  const double area = (cfg.x_max - cfg.x_min) * (cfg.y_max - cfg.y_min);
  const auto n_road = static_cast<std::size_t>(std::llround(cfg.road_density * area));
  for (std::size_t i = 0; i < n_road; ++i) {
    const double x = rng.uniform(cfg.x_min, cfg.x_max);
    const double y = rng.uniform(cfg.y_min, cfg.y_max);
    const double z = rng.normal(0.0, 0.03);
    const bool bright = rng.uniform() < cfg.bright_clutter_fraction;
    const double it = bright ? rng.uniform(0.5, 1.0)
                             : clamp01(rng.normal(cfg.road_intensity_mean, cfg.road_intensity_std));
    raw.push_back({x, y, z, it, -1});
  }
  rng.shuffle(std::span<Raw>(raw));

  scene.cloud.extra_channels = 1;
  for (const auto& p : raw) {
    const bool hidden = std::any_of(occluders.begin(), occluders.end(),
                                    [&](const Occluder& o) { return o.contains(p.x, p.y); });
    if (hidden) continue;
    scene.cloud.push(static_cast<float>(p.x), static_cast<float>(p.y), static_cast<float>(p.z),
                     static_cast<float>(p.intensity));
    scene.point_lane.push_back(static_cast<std::int8_t>(p.lane));
  }

  int occluded = 0;
  for (const auto& lane : lanes) {
    const bool hit = std::any_of(occluders.begin(), occluders.end(),
                                 [&](const Occluder& o) { return curve_hits(cfg, lane, o); });
    occluded += hit ? 1 : 0;
  }
  scene.labels.occluded_lane_count = occluded;
  scene.lanes = std::move(lanes);
  scene.occluders = std::move(occluders);
  return scene;
}

namespace detail {

inline std::vector<LaneCurve> sample_lanes(const SceneConfig& cfg, Rng& rng) {
  const auto n_lanes = static_cast<std::size_t>(
      rng.uniform_int(static_cast<int>(cfg.n_lanes_min), static_cast<int>(cfg.n_lanes_max)));
  std::vector<std::size_t> classes(cfg.N_cls);
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(classes));
  classes.resize(n_lanes);
  std::sort(classes.begin(), classes.end());

  const double a = 0.5 * rng.uniform(cfg.curvature_min, cfg.curvature_max);
  const double b = rng.uniform(-cfg.heading_max, cfg.heading_max);
  const double spacing = (cfg.y_max - cfg.y_min) / static_cast<double>(cfg.N_cls);
  std::vector<LaneCurve> lanes;
  for (std::size_t cls : classes) {
    LaneCurve lane;
    lane.cls = cls;
    lane.a = a + 0.5 * rng.uniform(-cfg.curvature_jitter, cfg.curvature_jitter);
    lane.b = b;
    lane.c = cfg.y_min + (static_cast<double>(cls) + 0.5) * spacing +
             rng.uniform(-cfg.lateral_jitter, cfg.lateral_jitter);
    lane.row_begin = 0;
    lane.row_end = cfg.H_BEV;
    if (rng.uniform() < cfg.partial_lane_prob) {
      const std::size_t half = cfg.H_BEV / 2;
      if (rng.uniform() < 0.5) {
        lane.row_begin = static_cast<std::size_t>(rng.uniform_int(1, static_cast<int>(half)));
      } else {
        lane.row_end = static_cast<std::size_t>(
            rng.uniform_int(static_cast<int>(half), static_cast<int>(cfg.H_BEV) - 1));
      }
    }
    lanes.push_back(lane);
  }
  return lanes;
}

inline std::vector<Occluder> sample_occluders(const SceneConfig& cfg,
                                              std::span<const LaneCurve> lanes, Rng& rng) {
  const auto n = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(cfg.n_occluders_min),
                                                          static_cast<int>(cfg.n_occluders_max)));
  std::vector<Occluder> out;
  if (lanes.empty()) return out;
  for (std::size_t i = 0; i < n; ++i) {
    const LaneCurve& lane = lanes[rng.below(lanes.size())];
    const double x0 = cfg.x_min + static_cast<double>(lane.row_begin) * cfg.cell_x();
    const double x1 = cfg.x_min + static_cast<double>(lane.row_end) * cfg.cell_x();
    const double xc = rng.uniform(x0, x1);
    const double yc = lane.y_at(xc) + rng.uniform(-0.3, 0.3);
    const double len = rng.uniform(cfg.occluder_length_min, cfg.occluder_length_max);
    const double wid = rng.uniform(cfg.occluder_width_min, cfg.occluder_width_max);
    out.push_back({xc - 0.5 * len, xc + 0.5 * len, yc - 0.5 * wid, yc + 0.5 * wid});
  }
  return out;
}

}  // namespace detail

/// Pure function of (cfg, seed). Lane layouts that violate the separation
/// rule are redrawn from a fresh sub-seed, at most 100 times.
inline Scene generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    Rng rng(mix_seed(seed) ^ mix_seed(attempt + 0x5EED));
    auto lanes = detail::sample_lanes(cfg, rng);
    if (!lanes_separable(rasterize_labels(cfg, lanes))) continue;
    auto occluders = detail::sample_occluders(cfg, lanes, rng);
    return render_scene(cfg, std::move(lanes), std::move(occluders), rng);
  }
  throw ConfigError("scene: could not place separable lanes within the grid after 100 attempts");
}

/// Table-style occlusion bucket: 0, 1, 2, 3, or 4 for "4-6".
inline std::size_t occlusion_bucket(int occluded_lane_count) {
  return static_cast<std::size_t>(std::clamp(occluded_lane_count, 0, 4));
}

inline const char* occlusion_bucket_name(std::size_t bucket) {
  static constexpr std::array<const char*, 5> kNames = {"0", "1", "2", "3", "4-6"};
  return kNames.at(bucket);
}

}  // namespace rwlane

#endif  // RWLANE_SCENE_HPP
