#ifndef RWLANE_CONFIG_HPP
#define RWLANE_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "rwlane/errors.hpp"

namespace rwlane {

using json = nlohmann::json;

/// BEV raster geometry plus encoder sizing. Rows run along x (forward),
/// columns along y (lateral); row 0 is nearest to the sensor.
struct GridConfig {
  double x_min = 0.0, x_max = 30.0;
  double y_min = -8.0, y_max = 8.0;
  std::size_t H_BEV = 48;
  std::size_t W_BEV = 32;
  std::size_t C_BEV = 32;
  std::size_t max_points_per_cell = 16;
  std::size_t extra_channels = 1;

  double cell_x() const { return (x_max - x_min) / static_cast<double>(H_BEV); }
  double cell_y() const { return (y_max - y_min) / static_cast<double>(W_BEV); }
  std::size_t cells() const { return H_BEV * W_BEV; }

  void validate() const {
    if (H_BEV < 4 || W_BEV < 4) throw ConfigError("grid: H_BEV and W_BEV must be >= 4");
    if (C_BEV < 1) throw ConfigError("grid: C_BEV must be >= 1");
    if (!(x_max > x_min) || !(y_max > y_min)) throw ConfigError("grid: degenerate range");
    if (max_points_per_cell < 1) throw ConfigError("grid: max_points_per_cell must be >= 1");
    if (extra_channels < 1) throw ConfigError("grid: intensity channel is required");
  }
};

struct BackboneConfig {
  std::size_t depth = 3;
  std::size_t C_head = 64;
  std::size_t patch = 2;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::uint64_t seed = 11;
};

struct HeadConfig {
  std::size_t N_cls = 6;
  std::size_t hidden = 128;
  std::uint64_t seed = 13;

  void validate() const {
    if (N_cls < 1) throw ConfigError("head: N_cls must be >= 1");
    if (hidden < 1) throw ConfigError("head: hidden must be >= 1");
  }
};

struct RefineConfig {
  double T_ext = 0.3;
  std::size_t W_thick = 5;
  std::size_t depth = 1;
  std::size_t heads = 4;
  std::size_t ffn_mult = 4;
  std::uint64_t seed = 17;

  void validate() const {
    if (!(T_ext >= 0.0 && T_ext <= 1.0)) throw ConfigError("refine: T_ext must lie in [0,1]");
    if (W_thick < 1 || W_thick % 2 == 0) throw ConfigError("refine: W_thick must be odd and >= 1");
    if (depth < 1) throw ConfigError("refine: depth must be >= 1");
  }
};

/// Synthetic scene generator settings. Curvature is the second derivative
/// of the lateral offset along x (1/m); lanes follow y(x) = a x^2 + b x + c
/// with a = curvature / 2.
struct SceneConfig {
  double x_min = 0.0, x_max = 30.0;
  double y_min = -8.0, y_max = 8.0;
  std::size_t H_BEV = 48;
  std::size_t W_BEV = 32;
  std::size_t N_cls = 6;
  std::size_t n_lanes_min = 1;
  std::size_t n_lanes_max = 6;
  double curvature_min = -0.004;
  double curvature_max = 0.004;
  double curvature_jitter = 0.0008;
  double heading_max = 0.04;
  double lateral_jitter = 0.3;
  double partial_lane_prob = 0.25;
  double lane_density = 8.0;        // points per metre of lane
  double road_density = 1.5;        // background points per square metre
  double lane_intensity_mean = 0.75, lane_intensity_std = 0.1;
  double road_intensity_mean = 0.15, road_intensity_std = 0.08;
  double bright_clutter_fraction = 0.03;
  std::size_t n_occluders_min = 0;
  std::size_t n_occluders_max = 6;
  double occluder_length_min = 3.5, occluder_length_max = 6.0;
  double occluder_width_min = 1.6, occluder_width_max = 2.2;
  std::uint64_t seed = 1;

  double cell_x() const { return (x_max - x_min) / static_cast<double>(H_BEV); }
  double cell_y() const { return (y_max - y_min) / static_cast<double>(W_BEV); }

  void validate() const {
    if (!(x_max > x_min) || !(y_max > y_min)) throw ConfigError("scene: degenerate range");
    if (H_BEV < 4 || W_BEV < 4) throw ConfigError("scene: grid must be at least 4x4");
    if (N_cls < 1) throw ConfigError("scene: N_cls must be >= 1");
    if (n_lanes_min < 1 || n_lanes_min > n_lanes_max) throw ConfigError("scene: bad lane range");
    if (n_lanes_max > N_cls) throw ConfigError("scene: n_lanes exceeds N_cls");
    if (curvature_min > curvature_max) throw ConfigError("scene: bad curvature range");
    if (!(lane_density > 0.0)) throw ConfigError("scene: lane density must be > 0");
    if (road_density < 0.0) throw ConfigError("scene: road density must be >= 0");
    if (n_occluders_min > n_occluders_max || n_occluders_max > 6) {
      throw ConfigError("scene: occluder count range must lie within 0..6");
    }
    if (occluder_length_min > occluder_length_max || occluder_width_min > occluder_width_max) {
      throw ConfigError("scene: bad occluder footprint range");
    }
  }
};

struct PathConfig {
  std::string data;
  std::string out;
};

struct RunConfig {
  GridConfig grid;
  BackboneConfig backbone;
  HeadConfig head;
  RefineConfig refine;
  SceneConfig scene;
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  double lr = 1e-4;
  std::uint64_t seed = 1;
  bool two_stage = true;
  /// "f64" (reference) or "f32" (speed mode).
  std::string dtype = "f64";
  PathConfig paths;

  /// Cross-module consistency; throws before any compute happens.
  void validate() const {
    grid.validate();
    head.validate();
    refine.validate();
    scene.validate();
    if (backbone.depth > 64) throw ConfigError("backbone: depth unreasonably large");
    if (backbone.patch < 1 || grid.H_BEV % backbone.patch || grid.W_BEV % backbone.patch) {
      throw ConfigError("backbone: H_BEV and W_BEV must be divisible by the patch size");
    }
    if (backbone.C_head < 1 || backbone.embed_dim < 1) throw ConfigError("backbone: bad width");
    if (backbone.heads < 1 || backbone.embed_dim % backbone.heads) {
      throw ConfigError("backbone: embed_dim not divisible by heads");
    }
    if (refine.heads < 1 || (backbone.C_head * refine.W_thick) % refine.heads) {
      throw ConfigError("refine: token width C_head*W_thick not divisible by heads");
    }
    if (scene.H_BEV != grid.H_BEV || scene.W_BEV != grid.W_BEV) {
      throw ConfigError("scene grid dims disagree with encoder grid");
    }
    if (scene.x_min != grid.x_min || scene.x_max != grid.x_max || scene.y_min != grid.y_min ||
        scene.y_max != grid.y_max) {
      throw ConfigError("scene metric ranges disagree with encoder grid");
    }
    if (scene.N_cls != head.N_cls) throw ConfigError("scene N_cls disagrees with head N_cls");
    if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
    if (dtype != "f64" && dtype != "f32") throw ConfigError("dtype must be f64 or f32");
  }

  /// Copies the shared grid dimensions into the scene section.
  void sync_scene_to_grid() {
    scene.x_min = grid.x_min;
    scene.x_max = grid.x_max;
    scene.y_min = grid.y_min;
    scene.y_max = grid.y_max;
    scene.H_BEV = grid.H_BEV;
    scene.W_BEV = grid.W_BEV;
    scene.N_cls = head.N_cls;
    if (scene.n_lanes_max > scene.N_cls) scene.n_lanes_max = scene.N_cls;
    if (scene.n_lanes_min > scene.n_lanes_max) scene.n_lanes_min = scene.n_lanes_max;
  }
};

// ---- JSON mapping -------------------------------------------------------

namespace detail {
template <class V>
void read_opt(const json& j, const char* key, V& v) {
  if (j.contains(key)) j.at(key).get_to(v);
}
inline void read_range(const json& j, const char* key, double& lo, double& hi) {
  if (!j.contains(key)) return;
  const auto& r = j.at(key);
  if (!r.is_array() || r.size() != 2) throw ConfigError(std::string(key) + " must be [lo, hi]");
  lo = r[0].get<double>();
  hi = r[1].get<double>();
}
}  // namespace detail

inline void to_json(json& j, const GridConfig& c) {
  j = json{{"x_range", {c.x_min, c.x_max}},
           {"y_range", {c.y_min, c.y_max}},
           {"H_BEV", c.H_BEV},
           {"W_BEV", c.W_BEV},
           {"C_BEV", c.C_BEV},
           {"max_points_per_cell", c.max_points_per_cell},
           {"extra_channels", c.extra_channels}};
}
inline void from_json(const json& j, GridConfig& c) {
  detail::read_range(j, "x_range", c.x_min, c.x_max);
  detail::read_range(j, "y_range", c.y_min, c.y_max);
  detail::read_opt(j, "H_BEV", c.H_BEV);
  detail::read_opt(j, "W_BEV", c.W_BEV);
  detail::read_opt(j, "C_BEV", c.C_BEV);
  detail::read_opt(j, "max_points_per_cell", c.max_points_per_cell);
  detail::read_opt(j, "extra_channels", c.extra_channels);
}

inline void to_json(json& j, const BackboneConfig& c) {
  j = json{{"depth", c.depth},     {"C_head", c.C_head},     {"patch", c.patch},
           {"embed_dim", c.embed_dim}, {"heads", c.heads}, {"ffn_mult", c.ffn_mult},
           {"seed", c.seed}};
}
inline void from_json(const json& j, BackboneConfig& c) {
  detail::read_opt(j, "depth", c.depth);
  detail::read_opt(j, "C_head", c.C_head);
  detail::read_opt(j, "patch", c.patch);
  detail::read_opt(j, "embed_dim", c.embed_dim);
  detail::read_opt(j, "heads", c.heads);
  detail::read_opt(j, "ffn_mult", c.ffn_mult);
  detail::read_opt(j, "seed", c.seed);
}

inline void to_json(json& j, const HeadConfig& c) {
  j = json{{"N_cls", c.N_cls}, {"hidden", c.hidden}, {"seed", c.seed}};
}
inline void from_json(const json& j, HeadConfig& c) {
  detail::read_opt(j, "N_cls", c.N_cls);
  detail::read_opt(j, "hidden", c.hidden);
  detail::read_opt(j, "seed", c.seed);
}

inline void to_json(json& j, const RefineConfig& c) {
  j = json{{"T_ext", c.T_ext}, {"W_thick", c.W_thick},   {"depth", c.depth},
           {"heads", c.heads}, {"ffn_mult", c.ffn_mult}, {"seed", c.seed}};
}
inline void from_json(const json& j, RefineConfig& c) {
  detail::read_opt(j, "T_ext", c.T_ext);
  detail::read_opt(j, "W_thick", c.W_thick);
  detail::read_opt(j, "depth", c.depth);
  detail::read_opt(j, "heads", c.heads);
  detail::read_opt(j, "ffn_mult", c.ffn_mult);
  detail::read_opt(j, "seed", c.seed);
}

inline void to_json(json& j, const SceneConfig& c) {
  j = json{{"x_range", {c.x_min, c.x_max}},
           {"y_range", {c.y_min, c.y_max}},
           {"H_BEV", c.H_BEV},
           {"W_BEV", c.W_BEV},
           {"N_cls", c.N_cls},
           {"n_lanes", {c.n_lanes_min, c.n_lanes_max}},
           {"curvature_range", {c.curvature_min, c.curvature_max}},
           {"curvature_jitter", c.curvature_jitter},
           {"heading_max", c.heading_max},
           {"lateral_jitter", c.lateral_jitter},
           {"partial_lane_prob", c.partial_lane_prob},
           {"lane_density", c.lane_density},
           {"road_density", c.road_density},
           {"lane_intensity", {c.lane_intensity_mean, c.lane_intensity_std}},
           {"road_intensity", {c.road_intensity_mean, c.road_intensity_std}},
           {"bright_clutter_fraction", c.bright_clutter_fraction},
           {"n_occluders", {c.n_occluders_min, c.n_occluders_max}},
           {"occluder_length", {c.occluder_length_min, c.occluder_length_max}},
           {"occluder_width", {c.occluder_width_min, c.occluder_width_max}},
           {"seed", c.seed}};
}
inline void from_json(const json& j, SceneConfig& c) {
  detail::read_range(j, "x_range", c.x_min, c.x_max);
  detail::read_range(j, "y_range", c.y_min, c.y_max);
  detail::read_opt(j, "H_BEV", c.H_BEV);
  detail::read_opt(j, "W_BEV", c.W_BEV);
  detail::read_opt(j, "N_cls", c.N_cls);
  if (j.contains("n_lanes")) {
    c.n_lanes_min = j.at("n_lanes").at(0).get<std::size_t>();
    c.n_lanes_max = j.at("n_lanes").at(1).get<std::size_t>();
  }
  detail::read_range(j, "curvature_range", c.curvature_min, c.curvature_max);
  detail::read_opt(j, "curvature_jitter", c.curvature_jitter);
  detail::read_opt(j, "heading_max", c.heading_max);
  detail::read_opt(j, "lateral_jitter", c.lateral_jitter);
  detail::read_opt(j, "partial_lane_prob", c.partial_lane_prob);
  detail::read_opt(j, "lane_density", c.lane_density);
  detail::read_opt(j, "road_density", c.road_density);
  detail::read_range(j, "lane_intensity", c.lane_intensity_mean, c.lane_intensity_std);
  detail::read_range(j, "road_intensity", c.road_intensity_mean, c.road_intensity_std);
  detail::read_opt(j, "bright_clutter_fraction", c.bright_clutter_fraction);
  if (j.contains("n_occluders")) {
    c.n_occluders_min = j.at("n_occluders").at(0).get<std::size_t>();
    c.n_occluders_max = j.at("n_occluders").at(1).get<std::size_t>();
  }
  detail::read_range(j, "occluder_length", c.occluder_length_min, c.occluder_length_max);
  detail::read_range(j, "occluder_width", c.occluder_width_min, c.occluder_width_max);
  detail::read_opt(j, "seed", c.seed);
}

inline void to_json(json& j, const RunConfig& c) {
  j = json{{"grid", c.grid},
           {"backbone", c.backbone},
           {"head", c.head},
           {"refine", c.refine},
           {"scene", c.scene},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"seed", c.seed},
           {"two_stage", c.two_stage},
           {"dtype", c.dtype},
           {"paths", {{"data", c.paths.data}, {"out", c.paths.out}}}};
}

/// Missing keys keep their defaults. When the config omits the scene's
/// grid fields they are copied from `grid`/`head`.
inline void from_json(const json& j, RunConfig& c) {
  detail::read_opt(j, "grid", c.grid);
  detail::read_opt(j, "backbone", c.backbone);
  detail::read_opt(j, "head", c.head);
  detail::read_opt(j, "refine", c.refine);
  c.sync_scene_to_grid();
  detail::read_opt(j, "scene", c.scene);
  detail::read_opt(j, "epochs", c.epochs);
  detail::read_opt(j, "batch_size", c.batch_size);
  detail::read_opt(j, "lr", c.lr);
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "two_stage", c.two_stage);
  detail::read_opt(j, "dtype", c.dtype);
  if (j.contains("paths")) {
    detail::read_opt(j.at("paths"), "data", c.paths.data);
    detail::read_opt(j.at("paths"), "out", c.paths.out);
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("config '" + path + "': " + e.what());
  }
  RunConfig c = j.get<RunConfig>();
  c.validate();
  return c;
}

}  // namespace rwlane

#endif  // RWLANE_CONFIG_HPP
