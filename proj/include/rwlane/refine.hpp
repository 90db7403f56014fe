#ifndef RWLANE_REFINE_HPP
#define RWLANE_REFINE_HPP

#include <cstdlib>
#include <span>
#include <string>
#include <vector>

#include "rwlane/attention.hpp"
#include "rwlane/config.hpp"
#include "rwlane/ops.hpp"
#include "rwlane/params.hpp"
#include "rwlane/rowwise_head.hpp"

namespace rwlane {

// Second stage: classes with enough positive rows are gathered into lane
// tokens around their proposals, correlated jointly by attention, written
// back into the feature map and re-predicted with a fresh row-wise head.
// Token coordinates are constants for differentiation.

/// Class c is gated in iff (1/H) * #{h : argmax(ext[c,h,:]) == 1} > T_ext.
template <class T>
std::vector<std::size_t> gate_lanes(std::span<const T> ext, std::size_t N, std::size_t H,
                                    double T_ext) {
  if (ext.size() != N * H * 2) throw DimensionError("gate_lanes: logits must be N_cls x H x 2");
  std::vector<std::size_t> gated;
  for (std::size_t c = 0; c < N; ++c) {
    std::size_t positive = 0;
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t r = (c * H + h) * 2;
      positive += ext[r + 1] > ext[r] ? 1 : 0;
    }
    if (static_cast<double>(positive) / static_cast<double>(H) > T_ext) gated.push_back(c);
  }
  return gated;
}

struct TokenCoord {
  std::size_t cls = 0;
  std::size_t row = 0;
  int center = 0;
};

template <class T>
struct LaneTokens {
  Var<T> tokens;  // [N_lanes x H x C_head*W_thick]
  std::vector<std::size_t> classes;
  std::vector<TokenCoord> coords;  // one per (lane, row), lane-major
  std::size_t C_head = 0, H = 0, W = 0, W_thick = 1;
};

/// Centre column per row of class `cls`: the proposal column, or for rows
/// without one the column of the nearest proposal row (ties toward the
/// smaller row). Returns empty when the class has no proposal at all.
inline std::vector<int> token_centers(const LaneProposals& p, std::size_t cls) {
  std::vector<int> centers(p.H, -1);
  std::vector<std::size_t> rows;
  for (std::size_t h = 0; h < p.H; ++h)
    if (p.column[cls * p.H + h] >= 0) rows.push_back(h);
  if (rows.empty()) return {};
  for (std::size_t h = 0; h < p.H; ++h) {
    std::size_t best = rows.front();
    for (std::size_t r : rows) {
      const auto d = std::abs(static_cast<long>(r) - static_cast<long>(h));
      const auto db = std::abs(static_cast<long>(best) - static_cast<long>(h));
      if (d < db) best = r;  // rows ascending, so ties keep the smaller row
    }
    centers[h] = p.column[cls * p.H + best];
  }
  return centers;
}

/// Flat [C x H x W] index of every token entry (slot-major within a token:
/// entry j*C + c comes from column center - r + j); -1 outside the grid.
template <class T>
std::vector<std::ptrdiff_t> token_index(const LaneTokens<T>& t) {
  const std::size_t D = t.C_head * t.W_thick;
  const int r = static_cast<int>(t.W_thick / 2);
  std::vector<std::ptrdiff_t> idx(t.coords.size() * D, -1);
  for (std::size_t k = 0; k < t.coords.size(); ++k) {
    const TokenCoord& tc = t.coords[k];
    for (std::size_t j = 0; j < t.W_thick; ++j) {
      const int w = tc.center - r + static_cast<int>(j);
      if (w < 0 || w >= static_cast<int>(t.W)) continue;
      for (std::size_t c = 0; c < t.C_head; ++c) {
        idx[k * D + j * t.C_head + c] =
            static_cast<std::ptrdiff_t>((c * t.H + tc.row) * t.W + static_cast<std::size_t>(w));
      }
    }
  }
  return idx;
}

/// Gathers W_thick-wide lane tokens for every gated class and every row.
/// Out-of-grid columns contribute zero vectors.
template <class T>
LaneTokens<T> gather_tokens(Var<T> fm, const LaneProposals& proposals,
                            const std::vector<std::size_t>& gated, std::size_t W_thick) {
  if (fm.shape().size() != 3) throw DimensionError("gather_tokens: feature map must be C x H x W");
  if (W_thick < 1 || W_thick % 2 == 0) throw ConfigError("gather_tokens: W_thick must be odd");
  if (gated.empty()) throw ConfigError("gather_tokens: no gated lane classes");
  LaneTokens<T> t;
  t.C_head = fm.shape()[0];
  t.H = fm.shape()[1];
  t.W = fm.shape()[2];
  t.W_thick = W_thick;
  if (proposals.H != t.H || proposals.W != t.W) {
    throw DimensionError("gather_tokens: proposals do not match feature map grid");
  }
  t.classes = gated;
  for (std::size_t cls : gated) {
    const auto centers = token_centers(proposals, cls);
    if (centers.empty()) throw ConfigError("gather_tokens: gated class has no proposal row");
    for (std::size_t h = 0; h < t.H; ++h) t.coords.push_back({cls, h, centers[h]});
  }
  t.tokens = ops::gather(fm, token_index(t), {gated.size(), t.H, t.C_head * W_thick});
  return t;
}

inline AttentionShape refine_attention_shape(const RefineConfig& r, std::size_t C_head) {
  const std::size_t d = C_head * r.W_thick;
  return {d, r.heads, d * r.ffn_mult, 1e-5};
}

template <class T>
void register_refine(ParameterStore<T>& store, const RefineConfig& r, std::size_t C_head,
                     std::size_t N_cls, std::size_t H, Rng& rng) {
  r.validate();
  const AttentionShape shape = refine_attention_shape(r, C_head);
  shape.validate();
  store.add_normal("refine.pos", {N_cls * H, shape.dim}, 0.02, rng);
  for (std::size_t i = 0; i < r.depth; ++i) {
    register_attention_block(store, "refine.block" + std::to_string(i), shape, rng);
  }
}

/// All gated lanes form one sequence of N_lanes*H tokens, so attention
/// mixes information across lanes. A learned embedding per (class, row)
/// is added first.
template <class T>
LaneTokens<T> refine_tokens(const LaneTokens<T>& in, const RefineConfig& r, std::size_t N_cls,
                            ParameterStore<T>& store) {
  Tape<T>& tape = *in.tokens.tape;
  FlopScope<T> scope(tape, "refine");
  const AttentionShape shape = refine_attention_shape(r, in.C_head);
  const std::size_t n_tok = in.coords.size();
  if (in.tokens.shape().back() != shape.dim) {
    throw DimensionError("refine_tokens: token width " + std::to_string(in.tokens.shape().back()) +
                         " does not match C_head*W_thick = " + std::to_string(shape.dim));
  }
  auto x = ops::reshape(in.tokens, {n_tok, shape.dim});
  std::vector<std::ptrdiff_t> pos_idx(n_tok * shape.dim);
  for (std::size_t k = 0; k < n_tok; ++k) {
    const std::size_t slot = in.coords[k].cls * in.H + in.coords[k].row;
    if (in.coords[k].cls >= N_cls) throw DimensionError("refine_tokens: class out of range");
    for (std::size_t d = 0; d < shape.dim; ++d)
      pos_idx[k * shape.dim + d] = static_cast<std::ptrdiff_t>(slot * shape.dim + d);
  }
  x = ops::add(x, ops::gather(store.var(tape, "refine.pos"), std::move(pos_idx), {n_tok, shape.dim}));
  for (std::size_t i = 0; i < r.depth; ++i) {
    x = attention_block(x, store, "refine.block" + std::to_string(i), shape);
  }
  LaneTokens<T> out = in;
  out.tokens = ops::reshape(x, in.tokens.shape());
  return out;
}

/// Writes each token's column slices back to their source cells. Cells
/// written by several tokens get the mean; out-of-grid slices are dropped;
/// all other cells keep `fm`.
template <class T>
Var<T> scatter_tokens(Var<T> fm, const LaneTokens<T>& refined) {
  if (fm.shape() != Shape{refined.C_head, refined.H, refined.W}) {
    throw DimensionError("scatter_tokens: feature map does not match token bookkeeping");
  }
  return ops::scatter_mean(fm, refined.tokens, token_index(refined));
}

inline std::uint64_t refine_flops(const RefineConfig& r, std::size_t C_head, std::size_t H,
                                  std::size_t n_lanes) {
  if (n_lanes == 0) return 0;
  return r.depth * attention_block_flops(n_lanes * H, refine_attention_shape(r, C_head));
}

}  // namespace rwlane

#endif  // RWLANE_REFINE_HPP
