#ifndef RWLANE_BACKBONE_HPP
#define RWLANE_BACKBONE_HPP

#include <string>
#include <vector>

#include "rwlane/attention.hpp"
#include "rwlane/config.hpp"
#include "rwlane/ops.hpp"
#include "rwlane/params.hpp"

namespace rwlane {

// Global feature correlator: patch tokens of the BEV image pass through
// `depth` self-attention blocks and are projected back onto the grid.

inline std::size_t patch_token_count(const GridConfig& g, const BackboneConfig& b) {
  return (g.H_BEV / b.patch) * (g.W_BEV / b.patch);
}

inline AttentionShape backbone_attention_shape(const BackboneConfig& b) {
  return {b.embed_dim, b.heads, b.embed_dim * b.ffn_mult, 1e-5};
}

inline void validate_backbone(const GridConfig& g, const BackboneConfig& b) {
  if (b.patch == 0 || g.H_BEV % b.patch || g.W_BEV % b.patch) {
    throw ConfigError("backbone: grid " + std::to_string(g.H_BEV) + "x" +
                      std::to_string(g.W_BEV) + " is not divisible by patch size " +
                      std::to_string(b.patch));
  }
  backbone_attention_shape(b).validate();
}

/// Index map turning a [C x H x W] map into patch tokens
/// [(H/p)(W/p) x p*p*C]; token feature ((dy*p + dx)*C + c).
inline std::vector<std::ptrdiff_t> patch_index(std::size_t C, std::size_t H, std::size_t W,
                                               std::size_t p) {
  const std::size_t tw = W / p, tokens = (H / p) * tw, dim = p * p * C;
  std::vector<std::ptrdiff_t> idx(tokens * dim);
  for (std::size_t t = 0; t < tokens; ++t) {
    const std::size_t ph = t / tw, pw = t % tw;
    for (std::size_t dy = 0; dy < p; ++dy)
      for (std::size_t dx = 0; dx < p; ++dx)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t h = ph * p + dy, w = pw * p + dx;
          idx[t * dim + (dy * p + dx) * C + c] = static_cast<std::ptrdiff_t>((c * H + h) * W + w);
        }
  }
  return idx;
}

/// Inverse layout of `patch_index`: tokens [(H/p)(W/p) x p*p*C] back to
/// [C x H x W].
inline std::vector<std::ptrdiff_t> unpatch_index(std::size_t C, std::size_t H, std::size_t W,
                                                 std::size_t p) {
  const std::size_t tw = W / p, dim = p * p * C;
  std::vector<std::ptrdiff_t> idx(C * H * W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        const std::size_t t = (h / p) * tw + w / p;
        const std::size_t k = ((h % p) * p + w % p) * C + c;
        idx[(c * H + h) * W + w] = static_cast<std::ptrdiff_t>(t * dim + k);
      }
  return idx;
}

template <class T>
void register_backbone(ParameterStore<T>& store, const GridConfig& g, const BackboneConfig& b,
                       Rng& rng) {
  validate_backbone(g, b);
  const std::size_t p2 = b.patch * b.patch;
  store.add_normal("backbone.embed_w", {p2 * g.C_BEV, b.embed_dim}, 0.02, rng);
  store.add_constant("backbone.embed_b", {b.embed_dim}, T{0});
  store.add_normal("backbone.pos", {patch_token_count(g, b), b.embed_dim}, 0.02, rng);
  for (std::size_t i = 0; i < b.depth; ++i) {
    register_attention_block(store, "backbone.block" + std::to_string(i),
                             backbone_attention_shape(b), rng);
  }
  store.add_normal("backbone.out_w", {b.embed_dim, p2 * b.C_head}, 0.02, rng);
  store.add_constant("backbone.out_b", {p2 * b.C_head}, T{0});
}

/// [C_BEV x H x W] -> [C_head x H x W]. With depth 0 only the linear
/// patch embedding and output projection remain.
template <class T>
Var<T> correlate(Var<T> bev, const GridConfig& g, const BackboneConfig& b,
                 ParameterStore<T>& store) {
  validate_backbone(g, b);
  if (bev.shape() != Shape{g.C_BEV, g.H_BEV, g.W_BEV}) {
    throw DimensionError("correlate: BEV image " + shape_str(bev.shape()) +
                         " does not match grid");
  }
  Tape<T>& tape = *bev.tape;
  FlopScope<T> scope(tape, "backbone");
  const std::size_t p2 = b.patch * b.patch;
  const std::size_t tokens = patch_token_count(g, b);
  auto x = ops::gather(bev, patch_index(g.C_BEV, g.H_BEV, g.W_BEV, b.patch),
                       {tokens, p2 * g.C_BEV});
  x = ops::linear(x, store.var(tape, "backbone.embed_w"), store.var(tape, "backbone.embed_b"));
  x = ops::add(x, store.var(tape, "backbone.pos"));
  const AttentionShape shape = backbone_attention_shape(b);
  for (std::size_t i = 0; i < b.depth; ++i) {
    x = attention_block(x, store, "backbone.block" + std::to_string(i), shape);
  }
  x = ops::linear(x, store.var(tape, "backbone.out_w"), store.var(tape, "backbone.out_b"));
  return ops::gather(x, unpatch_index(b.C_head, g.H_BEV, g.W_BEV, b.patch),
                     {b.C_head, g.H_BEV, g.W_BEV});
}

inline std::uint64_t backbone_flops(const GridConfig& g, const BackboneConfig& b) {
  const std::uint64_t t = patch_token_count(g, b), p2 = b.patch * b.patch;
  std::uint64_t f = 2 * t * (p2 * g.C_BEV) * b.embed_dim;
  f += b.depth * attention_block_flops(t, backbone_attention_shape(b));
  f += 2 * t * b.embed_dim * (p2 * b.C_head);
  return f;
}

}  // namespace rwlane

#endif  // RWLANE_BACKBONE_HPP
