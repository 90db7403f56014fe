#ifndef RWLANE_CHECKPOINT_HPP
#define RWLANE_CHECKPOINT_HPP

// Checkpoint file ("RWLN", little-endian):
//
//   char[4]  magic "RWLN"
//   u32      format version (1)
//   u32      byte length L, then L bytes of UTF-8 JSON:
//            {"config": RunConfig, "epoch": n, "adam": {lr, beta1, beta2, eps, step}}
//   repeated until end of file:
//     u32    name length, then the UTF-8 name
//     u8     rank
//     u32    each dimension
//     u8     dtype code (0 = f64, 1 = f32)
//     raw    little-endian payload
//
// Parameters come first in registration order, followed by the Adam
// moments of every parameter that has them ("adam.m/<name>", "adam.v/<name>",
// always f64).

#include <concepts>
#include <cstdint>
#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "rwlane/adam.hpp"
#include "rwlane/config.hpp"
#include "rwlane/dataset.hpp"
#include "rwlane/model.hpp"
#include "rwlane/params.hpp"

namespace rwlane {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

template <class T>
constexpr DType dtype_of() {
  return std::is_same_v<T, double> ? DType::f64 : DType::f32;
}

template <std::floating_point T>
struct Checkpoint {
  RunConfig config;
  std::size_t epoch = 0;
  ParameterStore<T> params;
  AdamState adam;
};

namespace detail {

inline void write_tensor_header(ByteWriter& w, const std::string& name, const Shape& shape,
                                DType dtype) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.raw(name);
  w.u8(static_cast<std::uint8_t>(shape.size()));
  for (std::size_t d : shape) w.u32(static_cast<std::uint32_t>(d));
  w.u8(static_cast<std::uint8_t>(dtype));
}

}  // namespace detail

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>& ck) {
  detail::ByteWriter w;
  w.raw("RWLN");
  w.u32(kCheckpointVersion);
  nlohmann::json meta;
  meta["config"] = ck.config;
  meta["epoch"] = ck.epoch;
  meta["adam"] = {{"lr", ck.adam.lr},
                  {"beta1", ck.adam.beta1},
                  {"beta2", ck.adam.beta2},
                  {"eps", ck.adam.eps},
                  {"step", ck.adam.step}};
  const std::string blob = meta.dump();
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.raw(blob);
  for (const auto& name : ck.params.names()) {
    const Tensor<T>& t = ck.params.at(name);
    detail::write_tensor_header(w, name, t.shape, dtype_of<T>());
    for (T v : t.data) {
      if constexpr (std::is_same_v<T, double>) {
        w.f64(v);
      } else {
        w.f32(v);
      }
    }
  }
  for (const auto& name : ck.params.names()) {
    auto it = ck.adam.m.find(name);
    if (it == ck.adam.m.end()) continue;
    const Shape& shape = ck.params.at(name).shape;
    for (const auto& [tag, moments] : {std::pair{"adam.m/", &ck.adam.m}, std::pair{"adam.v/", &ck.adam.v}}) {
      detail::write_tensor_header(w, tag + name, shape, DType::f64);
      for (double v : moments->at(name)) w.f64(v);
    }
  }
  return w.bytes();
}

template <class T>
Checkpoint<T> decode_checkpoint(std::vector<std::uint8_t> bytes, const std::string& origin) {
  detail::ByteReader r(std::move(bytes), origin);
  if (r.str(4) != "RWLN") r.fail("bad magic, not an RWLN checkpoint");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint<T> ck;
  const std::uint32_t len = r.u32();
  try {
    const auto meta = nlohmann::json::parse(r.str(len));
    ck.config = meta.at("config").get<RunConfig>();
    ck.epoch = meta.at("epoch").get<std::size_t>();
    const auto& a = meta.at("adam");
    ck.adam.lr = a.at("lr").get<double>();
    ck.adam.beta1 = a.at("beta1").get<double>();
    ck.adam.beta2 = a.at("beta2").get<double>();
    ck.adam.eps = a.at("eps").get<double>();
    ck.adam.step = a.at("step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad config blob: ") + e.what());
  }
  while (!r.at_end()) {
    const std::string name = r.str(r.u32());
    Shape shape(r.u8());
    for (auto& d : shape) d = r.u32();
    const auto dtype = static_cast<DType>(r.u8());
    if (dtype != DType::f64 && dtype != DType::f32) r.fail("unknown dtype code for " + name);
    const std::size_t n = numel(shape);
    if (n * (dtype == DType::f64 ? 8 : 4) > r.remaining()) r.fail("truncated tensor " + name);
    std::vector<double> values(n);
    for (double& v : values) v = dtype == DType::f64 ? r.f64() : static_cast<double>(r.f32());
    if (name.starts_with("adam.m/")) {
      ck.adam.m[name.substr(7)] = std::move(values);
    } else if (name.starts_with("adam.v/")) {
      ck.adam.v[name.substr(7)] = std::move(values);
    } else {
      Tensor<T> t(shape);
      for (std::size_t i = 0; i < n; ++i) t.data[i] = static_cast<T>(values[i]);
      ck.params.add(name, std::move(t));
    }
  }
  return ck;
}

template <class T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
  detail::write_file(path, encode_checkpoint(ck));
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  return decode_checkpoint<T>(detail::read_file(path), path);
}

/// Model from a checkpoint, refusing parameter sets whose names or shapes
/// differ from what the checkpoint's config defines.
template <class T>
LaneNet<T> model_from_checkpoint(Checkpoint<T> ck) {
  LaneNet<T> reference(ck.config);
  const auto& expect = reference.params();
  if (expect.names() != ck.params.names()) {
    throw FormatError("checkpoint parameter set does not match its config");
  }
  for (const auto& name : expect.names()) {
    if (expect.at(name).shape != ck.params.at(name).shape) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " +
                        shape_str(ck.params.at(name).shape) + ", config needs " +
                        shape_str(expect.at(name).shape));
    }
  }
  return LaneNet<T>(ck.config, std::move(ck.params));
}

/// Dimensions that must agree between a checkpoint and an active config.
inline void require_compatible(const RunConfig& active, const RunConfig& stored) {
  auto fail = [](const std::string& what) {
    throw FormatError("checkpoint incompatible with active config: " + what);
  };
  const auto& a = active;
  const auto& s = stored;
  if (a.grid.H_BEV != s.grid.H_BEV || a.grid.W_BEV != s.grid.W_BEV) fail("grid size");
  if (a.grid.C_BEV != s.grid.C_BEV || a.grid.extra_channels != s.grid.extra_channels) {
    fail("encoder channels");
  }
  if (a.backbone.C_head != s.backbone.C_head || a.backbone.depth != s.backbone.depth ||
      a.backbone.embed_dim != s.backbone.embed_dim || a.backbone.patch != s.backbone.patch ||
      a.backbone.ffn_mult != s.backbone.ffn_mult) {
    fail("backbone dims");
  }
  if (a.head.N_cls != s.head.N_cls || a.head.hidden != s.head.hidden) fail("head dims");
  if (a.refine.W_thick != s.refine.W_thick || a.refine.depth != s.refine.depth ||
      a.refine.ffn_mult != s.refine.ffn_mult) {
    fail("refinement dims");
  }
}

}  // namespace rwlane

#endif  // RWLANE_CHECKPOINT_HPP
