#ifndef RWLANE_ATTENTION_HPP
#define RWLANE_ATTENTION_HPP

#include <cmath>
#include <string>
#include <vector>

#include "rwlane/errors.hpp"
#include "rwlane/ops.hpp"
#include "rwlane/params.hpp"

namespace rwlane {

struct AttentionShape {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ffn = 256;
  double ln_eps = 1e-5;

  void validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) {
      throw ConfigError("attention: dim " + std::to_string(dim) +
                        " is not divisible by head count " + std::to_string(heads));
    }
    if (ffn == 0) throw ConfigError("attention: feed-forward width must be positive");
  }
};

/// Registers one encoder block under `prefix`: q/k/v/o projections,
/// two layer norms and a two-layer feed-forward.
template <class T>
void register_attention_block(ParameterStore<T>& store, const std::string& prefix,
                              const AttentionShape& shape, Rng& rng, double stddev = 0.02) {
  shape.validate();
  const std::size_t d = shape.dim;
  for (const char* p : {"q", "k", "v", "o"}) {
    store.add_normal(prefix + ".w" + p, {d, d}, stddev, rng);
    store.add_constant(prefix + ".b" + p, {d}, T{0});
  }
  store.add_constant(prefix + ".ln1_g", {d}, T{1});
  store.add_constant(prefix + ".ln1_b", {d}, T{0});
  store.add_normal(prefix + ".ff1_w", {d, shape.ffn}, stddev, rng);
  store.add_constant(prefix + ".ff1_b", {shape.ffn}, T{0});
  store.add_normal(prefix + ".ff2_w", {shape.ffn, d}, stddev, rng);
  store.add_constant(prefix + ".ff2_b", {d}, T{0});
  store.add_constant(prefix + ".ln2_g", {d}, T{1});
  store.add_constant(prefix + ".ln2_b", {d}, T{0});
}

/// Multi-head scaled dot-product self-attention sublayer (including the
/// output projection) over tokens[T x D].
template <class T>
Var<T> self_attention(Var<T> x, ParameterStore<T>& store, const std::string& prefix,
                      const AttentionShape& shape) {
  shape.validate();
  Tape<T>& tape = *x.tape;
  if (x.shape().size() != 2 || x.shape()[1] != shape.dim) {
    throw DimensionError("self_attention: tokens " + shape_str(x.shape()) +
                         " do not have width " + std::to_string(shape.dim));
  }
  auto proj = [&](const char* p) {
    return ops::linear(x, store.var(tape, prefix + ".w" + p), store.var(tape, prefix + ".b" + p));
  };
  auto q = proj("q");
  auto k = proj("k");
  auto v = proj("v");
  auto merged = ops::multi_head_attention(q, k, v, shape.heads);
  return ops::linear(merged, store.var(tape, prefix + ".wo"), store.var(tape, prefix + ".bo"));
}

/// Post-norm transformer encoder block:
///   h = LN(x + MHA(x));  out = LN(h + W2 relu(W1 h)).
/// Output shape equals input shape.
template <class T>
Var<T> attention_block(Var<T> x, ParameterStore<T>& store, const std::string& prefix,
                       const AttentionShape& shape) {
  Tape<T>& tape = *x.tape;
  const T eps = static_cast<T>(shape.ln_eps);
  auto attn = self_attention(x, store, prefix, shape);
  auto h = ops::layer_norm(ops::add(x, attn), store.var(tape, prefix + ".ln1_g"),
                           store.var(tape, prefix + ".ln1_b"), eps);
  auto ff = ops::linear(
      ops::relu(ops::linear(h, store.var(tape, prefix + ".ff1_w"),
                            store.var(tape, prefix + ".ff1_b"))),
      store.var(tape, prefix + ".ff2_w"), store.var(tape, prefix + ".ff2_b"));
  return ops::layer_norm(ops::add(h, ff), store.var(tape, prefix + ".ln2_g"),
                         store.var(tape, prefix + ".ln2_b"), eps);
}

/// Forward flops of one block over `tokens` tokens, matching the MAC count
/// the primitives report: 8*T*D^2 (q,k,v,o) + 4*T^2*D (scores, weighting)
/// + 4*T*D*F (feed-forward).
inline std::uint64_t attention_block_flops(std::uint64_t tokens, const AttentionShape& s) {
  const std::uint64_t d = s.dim, f = s.ffn;
  return 8 * tokens * d * d + 4 * tokens * tokens * d + 4 * tokens * d * f;
}

}  // namespace rwlane

#endif  // RWLANE_ATTENTION_HPP
