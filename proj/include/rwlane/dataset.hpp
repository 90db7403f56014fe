#ifndef RWLANE_DATASET_HPP
#define RWLANE_DATASET_HPP

// Binary scene dataset ("RWLS", little-endian):
//
//   char[4]  magic "RWLS"
//   u32      format version (1)
//   u32      scene count
//   u16 x4   N_cls, H_BEV, W_BEV, extra point channels C
//   per scene:
//     u32      point count P
//     f32      P * (3 + C) point values (x, y, z, intensity, ...)
//     u16      existence bitmap, ceil(H_BEV / 16) words per class,
//              bit (h % 16) of word (h / 16) set when the lane exists on row h
//     u16      location column for every existing (class, row), class-major,
//              rows ascending
//     u8       occluded lane count

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rwlane/config.hpp"
#include "rwlane/errors.hpp"
#include "rwlane/rng.hpp"
#include "rwlane/scene.hpp"

namespace rwlane {

inline constexpr std::uint32_t kDatasetVersion = 1;

struct SceneRecord {
  PointCloud cloud;
  LaneLabels labels;
  bool operator==(const SceneRecord&) const = default;
};

struct Dataset {
  std::size_t N_cls = 6, H = 48, W = 32, extra_channels = 1;
  std::vector<SceneRecord> scenes;
  bool operator==(const Dataset&) const = default;
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v & 0xff));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) u8(static_cast<std::uint8_t>((v >> s) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) u8(static_cast<std::uint8_t>((v >> s) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> bytes, std::string origin)
      : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    const std::uint16_t lo = u8();
    return static_cast<std::uint16_t>(lo | (static_cast<std::uint16_t>(u8()) << 8));
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int s = 0; s < 32; s += 8) v |= static_cast<std::uint32_t>(u8()) << s;
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int s = 0; s < 64; s += 8) v |= static_cast<std::uint64_t>(u8()) << s;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(origin_ + ": " + what + " (offset " + std::to_string(pos_) + ")");
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) fail("unexpected end of file");
  }
  std::vector<std::uint8_t> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for '" + path + "'");
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  detail::ByteWriter w;
  w.raw("RWLS");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.scenes.size()));
  w.u16(static_cast<std::uint16_t>(ds.N_cls));
  w.u16(static_cast<std::uint16_t>(ds.H));
  w.u16(static_cast<std::uint16_t>(ds.W));
  w.u16(static_cast<std::uint16_t>(ds.extra_channels));
  const std::size_t words = (ds.H + 15) / 16;
  for (const auto& s : ds.scenes) {
    if (s.labels.N_cls != ds.N_cls || s.labels.H != ds.H || s.labels.W != ds.W ||
        s.cloud.extra_channels != ds.extra_channels) {
      throw DimensionError("encode_dataset: scene dims disagree with dataset header");
    }
    w.u32(static_cast<std::uint32_t>(s.cloud.size()));
    for (float v : s.cloud.values) w.f32(v);
    for (std::size_t c = 0; c < ds.N_cls; ++c) {
      for (std::size_t k = 0; k < words; ++k) {
        std::uint16_t bits = 0;
        for (std::size_t b = 0; b < 16 && k * 16 + b < ds.H; ++b)
          if (s.labels.exists(c, k * 16 + b)) bits |= static_cast<std::uint16_t>(1u << b);
        w.u16(bits);
      }
    }
    for (std::size_t c = 0; c < ds.N_cls; ++c)
      for (std::size_t h = 0; h < ds.H; ++h)
        if (s.labels.exists(c, h)) w.u16(static_cast<std::uint16_t>(s.labels.col(c, h)));
    w.u8(static_cast<std::uint8_t>(s.labels.occluded_lane_count));
  }
  return w.bytes();
}

inline Dataset decode_dataset(std::vector<std::uint8_t> bytes, const std::string& origin) {
  detail::ByteReader r(std::move(bytes), origin);
  if (r.str(4) != "RWLS") r.fail("bad magic, not an RWLS dataset");
  if (const auto v = r.u32(); v != kDatasetVersion) {
    r.fail("unsupported dataset version " + std::to_string(v));
  }
  const std::uint32_t count = r.u32();
  Dataset ds;
  ds.N_cls = r.u16();
  ds.H = r.u16();
  ds.W = r.u16();
  ds.extra_channels = r.u16();
  if (ds.N_cls == 0 || ds.H == 0 || ds.W == 0 || ds.extra_channels == 0) {
    r.fail("zero dimension in dataset header");
  }
  const std::size_t words = (ds.H + 15) / 16;
  const std::size_t stride = 3 + ds.extra_channels;
  ds.scenes.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    SceneRecord s;
    const std::uint32_t n = r.u32();
    if (static_cast<std::size_t>(n) * stride * 4 > r.remaining()) r.fail("point count too large");
    s.cloud.extra_channels = ds.extra_channels;
    s.cloud.values.resize(static_cast<std::size_t>(n) * stride);
    for (float& v : s.cloud.values) v = r.f32();
    s.labels = LaneLabels(ds.N_cls, ds.H, ds.W);
    std::vector<bool> exist(ds.N_cls * ds.H, false);
    for (std::size_t c = 0; c < ds.N_cls; ++c) {
      for (std::size_t k = 0; k < words; ++k) {
        const std::uint16_t bits = r.u16();
        for (std::size_t b = 0; b < 16; ++b) {
          if (!(bits & (1u << b))) continue;
          if (k * 16 + b >= ds.H) r.fail("existence bit beyond H_BEV");
          exist[c * ds.H + k * 16 + b] = true;
        }
      }
    }
    for (std::size_t c = 0; c < ds.N_cls; ++c) {
      for (std::size_t h = 0; h < ds.H; ++h) {
        if (!exist[c * ds.H + h]) continue;
        const std::uint16_t col = r.u16();
        if (col >= ds.W) r.fail("location column out of range");
        s.labels.col(c, h) = col;
      }
    }
    s.labels.occluded_lane_count = r.u8();
    if (s.labels.occluded_lane_count > 6) r.fail("occluded lane count above 6");
    ds.scenes.push_back(std::move(s));
  }
  if (!r.at_end()) r.fail("trailing bytes after last scene");
  return ds;
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
  detail::write_file(path, encode_dataset(ds));
}

inline Dataset read_dataset(const std::string& path) {
  return decode_dataset(detail::read_file(path), path);
}

/// Sub-seed of scene i: splitmix64(seed XOR i).
inline std::uint64_t scene_seed(std::uint64_t seed, std::uint64_t index) {
  return mix_seed(seed ^ index);
}

inline Dataset generate_dataset(const SceneConfig& cfg, std::size_t n_scenes, std::uint64_t seed) {
  if (n_scenes < 1) throw ConfigError("dataset: n_scenes must be >= 1");
  cfg.validate();
  Dataset ds;
  ds.N_cls = cfg.N_cls;
  ds.H = cfg.H_BEV;
  ds.W = cfg.W_BEV;
  ds.extra_channels = 1;
  ds.scenes.reserve(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) {
    Scene s = generate_scene(cfg, scene_seed(seed, i));
    ds.scenes.push_back({std::move(s.cloud), std::move(s.labels)});
  }
  return ds;
}

/// Generates `n_scenes` scenes and writes them to `path`.
inline Dataset make_dataset(const SceneConfig& cfg, std::size_t n_scenes, std::uint64_t seed,
                            const std::string& path) {
  Dataset ds = generate_dataset(cfg, n_scenes, seed);
  write_dataset(path, ds);
  return ds;
}

}  // namespace rwlane

#endif  // RWLANE_DATASET_HPP
