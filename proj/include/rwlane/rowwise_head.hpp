#ifndef RWLANE_ROWWISE_HEAD_HPP
#define RWLANE_ROWWISE_HEAD_HPP

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rwlane/config.hpp"
#include "rwlane/ops.hpp"
#include "rwlane/params.hpp"

namespace rwlane {

// Row-wise detection head. Every feature-map row (all channels and
// columns, flattened c-major) goes through two separate 2-layer MLPs whose
// weights are shared across rows:
//   existence: C*W -> hidden -> N_cls*2   (index 0 = not-exist, 1 = exist)
//   location:  C*W -> hidden -> N_cls*W

template <class T>
struct HeadOutput {
  Var<T> ext;  // [N_cls x H x 2]
  Var<T> loc;  // [N_cls x H x W]
};

/// Decoded proposals: column[c*H + h] is the lane column or -1.
struct LaneProposals {
  std::size_t N_cls = 0, H = 0, W = 0;
  std::vector<int> column;
  std::vector<double> probability;

  LaneProposals() = default;
  LaneProposals(std::size_t n, std::size_t h, std::size_t w)
      : N_cls(n), H(h), W(w), column(n * h, -1), probability(n * h, 0.0) {}

  std::optional<int> at(std::size_t c, std::size_t h) const {
    const int v = column[c * H + h];
    return v >= 0 ? std::optional<int>(v) : std::nullopt;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (int v : column) n += v >= 0 ? 1 : 0;
    return n;
  }
  bool operator==(const LaneProposals&) const = default;
};

template <class T>
void register_rowwise_head(ParameterStore<T>& store, const std::string& prefix, std::size_t C_head,
                           std::size_t W, const HeadConfig& h, Rng& rng) {
  h.validate();
  const std::size_t in = C_head * W;
  store.add_normal(prefix + ".ext_w1", {in, h.hidden}, 0.02, rng);
  store.add_constant(prefix + ".ext_b1", {h.hidden}, T{0});
  store.add_normal(prefix + ".ext_w2", {h.hidden, h.N_cls * 2}, 0.02, rng);
  store.add_constant(prefix + ".ext_b2", {h.N_cls * 2}, T{0});
  store.add_normal(prefix + ".loc_w1", {in, h.hidden}, 0.02, rng);
  store.add_constant(prefix + ".loc_b1", {h.hidden}, T{0});
  store.add_normal(prefix + ".loc_w2", {h.hidden, h.N_cls * W}, 0.02, rng);
  store.add_constant(prefix + ".loc_b2", {h.N_cls * W}, T{0});
}

namespace detail {

/// [C x H x W] -> [H x C*W].
inline std::vector<std::ptrdiff_t> row_major_index(std::size_t C, std::size_t H, std::size_t W) {
  std::vector<std::ptrdiff_t> idx(C * H * W);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t w = 0; w < W; ++w)
        idx[h * C * W + c * W + w] = static_cast<std::ptrdiff_t>((c * H + h) * W + w);
  return idx;
}

/// [H x N*K] -> [N x H x K].
inline std::vector<std::ptrdiff_t> class_major_index(std::size_t N, std::size_t H, std::size_t K) {
  std::vector<std::ptrdiff_t> idx(N * H * K);
  for (std::size_t c = 0; c < N; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t k = 0; k < K; ++k)
        idx[(c * H + h) * K + k] = static_cast<std::ptrdiff_t>(h * N * K + c * K + k);
  return idx;
}

}  // namespace detail

template <class T>
HeadOutput<T> forward_heads(Var<T> fm, const HeadConfig& h, ParameterStore<T>& store,
                            const std::string& prefix) {
  Tape<T>& tape = *fm.tape;
  if (fm.shape().size() != 3) throw DimensionError("forward_heads: feature map must be C x H x W");
  const std::size_t C = fm.shape()[0], H = fm.shape()[1], W = fm.shape()[2];
  const Shape& w1 = store.at(prefix + ".ext_w1").shape;
  if (w1[0] != C * W || store.at(prefix + ".loc_w2").shape[1] != h.N_cls * W) {
    throw DimensionError("forward_heads: feature map " + shape_str(fm.shape()) +
                         " does not match head '" + prefix + "' parameters");
  }
  FlopScope<T> scope(tape, prefix);
  auto rows = ops::gather(fm, detail::row_major_index(C, H, W), {H, C * W});
  auto mlp = [&](const std::string& tag) {
    auto hid = ops::relu(ops::linear(rows, store.var(tape, prefix + "." + tag + "_w1"),
                                     store.var(tape, prefix + "." + tag + "_b1")));
    return ops::linear(hid, store.var(tape, prefix + "." + tag + "_w2"),
                       store.var(tape, prefix + "." + tag + "_b2"));
  };
  auto ext = ops::gather(mlp("ext"), detail::class_major_index(h.N_cls, H, 2), {h.N_cls, H, 2});
  auto loc = ops::gather(mlp("loc"), detail::class_major_index(h.N_cls, H, W), {h.N_cls, H, W});
  return {ext, loc};
}

/// Per (class,row): existence by argmax over the 2-vector, location by
/// argmax over the W columns. Ties go to the lowest index, so a (0,0)
/// existence pair decodes as not-exist.
template <class T>
LaneProposals decode_proposals(std::span<const T> ext, std::span<const T> loc, std::size_t N,
                               std::size_t H, std::size_t W) {
  if (ext.size() != N * H * 2 || loc.size() != N * H * W) {
    throw DimensionError("decode_proposals: logits do not match N_cls x H x {2, W}");
  }
  LaneProposals p(N, H, W);
  for (std::size_t r = 0; r < N * H; ++r) {
    if (!(ext[r * 2 + 1] > ext[r * 2])) continue;
    const T* row = loc.data() + r * W;
    std::size_t best = 0;
    for (std::size_t w = 1; w < W; ++w)
      if (row[w] > row[best]) best = w;
    double z = 0.0;
    for (std::size_t w = 0; w < W; ++w) z += std::exp(static_cast<double>(row[w] - row[best]));
    p.column[r] = static_cast<int>(best);
    p.probability[r] = 1.0 / z;
  }
  return p;
}

template <class T>
LaneProposals decode_proposals(const HeadOutput<T>& out) {
  const Shape& s = out.loc.shape();
  return decode_proposals<T>(out.ext.value(), out.loc.value(), s[0], s[1], s[2]);
}

/// Both MLPs over H rows.
inline std::uint64_t rowwise_head_flops(std::size_t H, std::size_t C_head, std::size_t W,
                                        const HeadConfig& h) {
  const std::uint64_t in = C_head * W;
  const std::uint64_t ext = 2ULL * H * (in * h.hidden + h.hidden * h.N_cls * 2);
  const std::uint64_t loc = 2ULL * H * (in * h.hidden + h.hidden * h.N_cls * W);
  return ext + loc;
}

/// Location MLP alone (used for hand checks).
inline std::uint64_t location_head_flops(std::size_t H, std::size_t C_head, std::size_t W,
                                         const HeadConfig& h) {
  return 2ULL * H * (C_head * W * h.hidden + h.hidden * h.N_cls * W);
}

}  // namespace rwlane

#endif  // RWLANE_ROWWISE_HEAD_HPP
