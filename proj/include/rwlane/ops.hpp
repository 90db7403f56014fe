#ifndef RWLANE_OPS_HPP
#define RWLANE_OPS_HPP

// Differentiable primitives over Tape nodes. Each primitive computes its
// forward value eagerly and, when any input requires a gradient, records a
// closure that accumulates into the inputs' gradient buffers.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rwlane/errors.hpp"
#include "rwlane/tape.hpp"
#include "rwlane/tensor.hpp"

namespace rwlane::ops {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
MatMap<T> as_mat(std::span<T> s, std::size_t rows, std::size_t cols) {
  return MatMap<T>(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
template <class T>
ConstMatMap<T> as_mat(std::span<const T> s, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(s.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(s));
  }
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

}  // namespace detail

/// a[m x k] * b[k x n]. Reports 2*m*k*n flops.
template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(sa) + " and " +
                         shape_str(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  auto out = t.emplace({m, n}, std::vector<T>(m * n),
                       t.requires_grad(a.id) || t.requires_grad(b.id));
  detail::as_mat<T>(t.mutable_value(out.id), m, n).noalias() =
      detail::as_mat<T>(t.value(a.id), m, k) * detail::as_mat<T>(t.value(b.id), k, n);
  t.flops().add(2ULL * m * k * n);
  t.on_backward(out, [&t, a = a.id, b = b.id, o = out.id, m, k, n] {
    auto g = detail::as_mat<T>(std::span<const T>(t.grad(o)), m, n);
    if (t.requires_grad(a)) {
      detail::as_mat<T>(t.grad(a), m, k).noalias() +=
          g * detail::as_mat<T>(t.value(b), k, n).transpose();
    }
    if (t.requires_grad(b)) {
      detail::as_mat<T>(t.grad(b), k, n).noalias() +=
          detail::as_mat<T>(t.value(a), m, k).transpose() * g;
    }
  });
  return out;
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  detail::require_same(a.shape(), b.shape(), "add");
  auto va = t.value(a.id), vb = t.value(b.id);
  std::vector<T> v(va.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = va[i] + vb[i];
  auto out = t.emplace(a.shape(), std::move(v), t.requires_grad(a.id) || t.requires_grad(b.id));
  t.on_backward(out, [&t, a = a.id, b = b.id, o = out.id] {
    auto g = t.grad(o);
    for (std::size_t id : {a, b}) {
      if (!t.requires_grad(id)) continue;
      auto ga = t.grad(id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
  });
  return out;
}

/// Elementwise product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& t = *a.tape;
  detail::require_same(a.shape(), b.shape(), "mul");
  auto va = t.value(a.id), vb = t.value(b.id);
  std::vector<T> v(va.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = va[i] * vb[i];
  auto out = t.emplace(a.shape(), std::move(v), t.requires_grad(a.id) || t.requires_grad(b.id));
  t.on_backward(out, [&t, a = a.id, b = b.id, o = out.id] {
    auto g = t.grad(o);
    if (t.requires_grad(a)) {
      auto ga = t.grad(a);
      auto vb = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      auto va = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
  return out;
}

/// x[m x n] + bias[n], bias broadcast over rows.
template <class T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  Tape<T>& t = *x.tape;
  detail::require_rank(x.shape(), 2, "add_bias");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (bias.shape() != Shape{n}) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not fit " +
                         shape_str(x.shape()));
  }
  auto vx = t.value(x.id), vb = t.value(bias.id);
  std::vector<T> v(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = vx[i * n + j] + vb[j];
  auto out = t.emplace({m, n}, std::move(v),
                       t.requires_grad(x.id) || t.requires_grad(bias.id));
  t.on_backward(out, [&t, x = x.id, b = bias.id, o = out.id, m, n] {
    auto g = t.grad(o);
    if (t.requires_grad(x)) {
      auto gx = t.grad(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
  return out;
}

template <class T>
Var<T> scale(Var<T> x, T s) {
  Tape<T>& t = *x.tape;
  auto vx = t.value(x.id);
  std::vector<T> v(vx.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = vx[i] * s;
  auto out = t.emplace(x.shape(), std::move(v), t.requires_grad(x.id));
  t.on_backward(out, [&t, x = x.id, o = out.id, s] {
    auto g = t.grad(o);
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
  });
  return out;
}

template <class T>
Var<T> relu(Var<T> x) {
  Tape<T>& t = *x.tape;
  auto vx = t.value(x.id);
  std::vector<T> v(vx.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = vx[i] > T{0} ? vx[i] : T{0};
  auto out = t.emplace(x.shape(), std::move(v), t.requires_grad(x.id));
  t.on_backward(out, [&t, x = x.id, o = out.id] {
    auto g = t.grad(o);
    auto vx = t.value(x);
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (vx[i] > T{0}) gx[i] += g[i];
  });
  return out;
}

/// Sum of all entries, as a rank-0 scalar.
template <class T>
Var<T> sum(Var<T> x) {
  Tape<T>& t = *x.tape;
  T s{0};
  for (T v : t.value(x.id)) s += v;
  auto out = t.emplace({}, {s}, t.requires_grad(x.id));
  t.on_backward(out, [&t, x = x.id, o = out.id] {
    const T g = t.grad(o)[0];
    for (T& gx : t.grad(x)) gx += g;
  });
  return out;
}

template <class T>
Var<T> transpose(Var<T> x) {
  Tape<T>& t = *x.tape;
  detail::require_rank(x.shape(), 2, "transpose");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  std::vector<T> v(m * n);
  detail::as_mat<T>(std::span<T>(v), n, m) = detail::as_mat<T>(t.value(x.id), m, n).transpose();
  auto out = t.emplace({n, m}, std::move(v), t.requires_grad(x.id));
  t.on_backward(out, [&t, x = x.id, o = out.id, m, n] {
    detail::as_mat<T>(t.grad(x), m, n) +=
        detail::as_mat<T>(std::span<const T>(t.grad(o)), n, m).transpose();
  });
  return out;
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tape<T>& t = *x.tape;
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  auto vx = t.value(x.id);
  auto out = t.emplace(std::move(shape), std::vector<T>(vx.begin(), vx.end()),
                       t.requires_grad(x.id));
  t.on_backward(out, [&t, x = x.id, o = out.id] {
    auto g = t.grad(o);
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
  return out;
}

/// Softmax along `axis`, computed with max subtraction.
template <class T>
Var<T> softmax_axis(Var<T> x, std::size_t axis) {
  Tape<T>& t = *x.tape;
  const Shape& s = x.shape();
  if (axis >= s.size()) {
    throw DimensionError("softmax_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  auto vx = t.value(x.id);
  std::vector<T> v(vx.size());
  // Plain loops on purpose: vectorized exp peels on alignment and would
  // make bits depend on where the allocator put the buffer.
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = vx[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, vx[base + k * inner]);
      T z{0};
      for (std::size_t k = 0; k < len; ++k) {
        const T e = std::exp(vx[base + k * inner] - mx);
        v[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < len; ++k) v[base + k * inner] /= z;
    }
  }
  auto out = t.emplace(s, std::move(v), t.requires_grad(x.id));
  t.on_backward(out, [&t, x = x.id, o = out.id, outer, inner, len] {
    auto g = t.grad(o);
    auto y = t.value(o);
    auto gx = t.grad(x);
    for (std::size_t oo = 0; oo < outer; ++oo) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = oo * len * inner + in;
        T dot{0};
        for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < len; ++k) {
          const std::size_t i = base + k * inner;
          gx[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
  return out;
}

/// Layer normalization over the last axis of x[m x n] with gain/bias [n].
template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-5)) {
  Tape<T>& t = *x.tape;
  detail::require_rank(x.shape(), 2, "layer_norm");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(n) + "]");
  }
  auto vx = t.value(x.id), vg = t.value(gamma.id), vb = t.value(beta.id);
  std::vector<T> v(m * n);
  std::vector<T> xhat(m * n);
  std::vector<T> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    T mean{0};
    for (std::size_t j = 0; j < n; ++j) mean += vx[i * n + j];
    mean /= static_cast<T>(n);
    T var{0};
    for (std::size_t j = 0; j < n; ++j) {
      const T d = vx[i * n + j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(n);
    inv_std[i] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (vx[i * n + j] - mean) * inv_std[i];
      v[i * n + j] = xhat[i * n + j] * vg[j] + vb[j];
    }
  }
  const bool rg = t.requires_grad(x.id) || t.requires_grad(gamma.id) || t.requires_grad(beta.id);
  auto out = t.emplace({m, n}, std::move(v), rg);
  t.on_backward(out, [&t, x = x.id, g = gamma.id, b = beta.id, o = out.id, m, n,
                      xhat = std::move(xhat), inv_std = std::move(inv_std)] {
    auto go = t.grad(o);
    auto vg = t.value(g);
    if (t.requires_grad(g)) {
      auto gg = t.grad(g);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gg[j] += go[i * n + j] * xhat[i * n + j];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += go[i * n + j];
    }
    if (t.requires_grad(x)) {
      auto gx = t.grad(x);
      const T inv_n = T{1} / static_cast<T>(n);
      for (std::size_t i = 0; i < m; ++i) {
        T sum_d{0}, sum_dx{0};
        for (std::size_t j = 0; j < n; ++j) {
          const T d = go[i * n + j] * vg[j];
          sum_d += d;
          sum_dx += d * xhat[i * n + j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          const T d = go[i * n + j] * vg[j];
          gx[i * n + j] += inv_std[i] * (d - inv_n * sum_d - xhat[i * n + j] * inv_n * sum_dx);
        }
      }
    }
  });
  return out;
}

/// out.flat[i] = index[i] >= 0 ? x.flat[index[i]] : 0.
/// Covers permutes, patching, slicing and zero-padded window gathers.
template <class T>
Var<T> gather(Var<T> x, std::vector<std::ptrdiff_t> index, Shape out_shape) {
  Tape<T>& t = *x.tape;
  if (index.size() != numel(out_shape)) {
    throw DimensionError("gather: index map has " + std::to_string(index.size()) +
                         " entries for output " + shape_str(out_shape));
  }
  auto vx = t.value(x.id);
  const auto limit = static_cast<std::ptrdiff_t>(vx.size());
  std::vector<T> v(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const std::ptrdiff_t src = index[i];
    if (src >= limit) throw DimensionError("gather: index out of range");
    v[i] = src >= 0 ? vx[static_cast<std::size_t>(src)] : T{0};
  }
  auto out = t.emplace(std::move(out_shape), std::move(v), t.requires_grad(x.id));
  t.on_backward(out, [&t, x = x.id, o = out.id, index = std::move(index)] {
    auto g = t.grad(o);
    auto gx = t.grad(x);
    for (std::size_t i = 0; i < index.size(); ++i)
      if (index[i] >= 0) gx[static_cast<std::size_t>(index[i])] += g[i];
  });
  return out;
}

/// Writes src.flat[j] to base.flat[target[j]] (target -1 discards). A
/// position written by several sources receives their arithmetic mean;
/// unwritten positions keep base. The result is a new node.
template <class T>
Var<T> scatter_mean(Var<T> base, Var<T> src, std::vector<std::ptrdiff_t> target) {
  Tape<T>& t = *base.tape;
  if (target.size() != src.size()) {
    throw DimensionError("scatter_mean: target map size does not match source " +
                         shape_str(src.shape()));
  }
  auto vb = t.value(base.id), vs = t.value(src.id);
  const auto limit = static_cast<std::ptrdiff_t>(vb.size());
  std::vector<T> sums(vb.size(), T{0});
  std::vector<std::uint32_t> count(vb.size(), 0);
  for (std::size_t j = 0; j < target.size(); ++j) {
    if (target[j] < 0) continue;
    if (target[j] >= limit) throw DimensionError("scatter_mean: target out of range");
    const auto p = static_cast<std::size_t>(target[j]);
    sums[p] += vs[j];
    ++count[p];
  }
  std::vector<T> v(vb.begin(), vb.end());
  for (std::size_t p = 0; p < v.size(); ++p)
    if (count[p]) v[p] = sums[p] / static_cast<T>(count[p]);
  auto out = t.emplace(base.shape(), std::move(v),
                       t.requires_grad(base.id) || t.requires_grad(src.id));
  t.on_backward(out, [&t, b = base.id, s = src.id, o = out.id, target = std::move(target),
                      count = std::move(count)] {
    auto g = t.grad(o);
    if (t.requires_grad(b)) {
      auto gb = t.grad(b);
      for (std::size_t p = 0; p < g.size(); ++p)
        if (!count[p]) gb[p] += g[p];
    }
    if (t.requires_grad(s)) {
      auto gs = t.grad(s);
      for (std::size_t j = 0; j < target.size(); ++j) {
        if (target[j] < 0) continue;
        const auto p = static_cast<std::size_t>(target[j]);
        gs[j] += g[p] / static_cast<T>(count[p]);
      }
    }
  });
  return out;
}

/// Max over rows of x[N x C] grouped by segment[i] in [0, n_segments)
/// (-1 excludes a row). Empty segments are exact zeros; ties resolve to
/// the lowest row index.
template <class T>
Var<T> segment_max(Var<T> x, std::vector<std::ptrdiff_t> segment, std::size_t n_segments) {
  Tape<T>& t = *x.tape;
  detail::require_rank(x.shape(), 2, "segment_max");
  const std::size_t rows = x.shape()[0], c = x.shape()[1];
  if (segment.size() != rows) throw DimensionError("segment_max: one segment id per row");
  auto vx = t.value(x.id);
  std::vector<T> v(n_segments * c, T{0});
  std::vector<std::ptrdiff_t> arg(n_segments * c, -1);
  for (std::size_t i = 0; i < rows; ++i) {
    if (segment[i] < 0) continue;
    const auto s = static_cast<std::size_t>(segment[i]);
    if (s >= n_segments) throw DimensionError("segment_max: segment id out of range");
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t o = s * c + k;
      if (arg[o] < 0 || vx[i * c + k] > v[o]) {
        v[o] = vx[i * c + k];
        arg[o] = static_cast<std::ptrdiff_t>(i);
      }
    }
  }
  auto out = t.emplace({n_segments, c}, std::move(v), t.requires_grad(x.id));
  t.on_backward(out, [&t, x = x.id, o = out.id, c, arg = std::move(arg)] {
    auto g = t.grad(o);
    auto gx = t.grad(x);
    for (std::size_t j = 0; j < arg.size(); ++j)
      if (arg[j] >= 0) gx[static_cast<std::size_t>(arg[j]) * c + j % c] += g[j];
  });
  return out;
}

/// Columns [start, start+count) of x[m x n].
template <class T>
Var<T> slice_cols(Var<T> x, std::size_t start, std::size_t count) {
  detail::require_rank(x.shape(), 2, "slice_cols");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (start + count > n) throw DimensionError("slice_cols: range exceeds " + shape_str(x.shape()));
  std::vector<std::ptrdiff_t> idx(m * count);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j)
      idx[i * count + j] = static_cast<std::ptrdiff_t>(i * n + start + j);
  return gather(x, std::move(idx), {m, count});
}

/// Horizontal concatenation of [m x n_i] blocks.
template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape<T>& t = *parts.front().tape;
  const std::size_t m = parts.front().shape().at(0);
  std::size_t n = 0;
  bool rg = false;
  for (const auto& p : parts) {
    detail::require_rank(p.shape(), 2, "concat_cols");
    if (p.shape()[0] != m) throw DimensionError("concat_cols: row counts differ");
    n += p.shape()[1];
    rg = rg || t.requires_grad(p.id);
  }
  std::vector<T> v(m * n);
  std::size_t off = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    auto vp = t.value(p.id);
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(vp.begin() + static_cast<std::ptrdiff_t>(i * w), w,
                  v.begin() + static_cast<std::ptrdiff_t>(i * n + off));
    off += w;
    ids.push_back(p.id);
    widths.push_back(w);
  }
  auto out = t.emplace({m, n}, std::move(v), rg);
  t.on_backward(out, [&t, o = out.id, ids = std::move(ids), widths = std::move(widths), m, n] {
    auto g = t.grad(o);
    std::size_t off = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const std::size_t w = widths[k];
      if (t.requires_grad(ids[k])) {
        auto gp = t.grad(ids[k]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + off + j];
      }
      off += w;
    }
  });
  return out;
}

/// Mean softmax cross-entropy over rows of logits[R x K] against integer
/// targets; rows with target < 0 are masked out. The summed row losses are
/// divided by `normalizer`. Probabilities are floored at 1e-12 inside the
/// log. With no unmasked row the result is an exact 0.
template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, const std::vector<int>& target, double normalizer) {
  Tape<T>& t = *logits.tape;
  detail::require_rank(logits.shape(), 2, "softmax_cross_entropy");
  const std::size_t rows = logits.shape()[0], k = logits.shape()[1];
  if (target.size() != rows) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(target.size()) +
                         " targets for " + shape_str(logits.shape()));
  }
  constexpr double kFloor = 1e-12;
  auto vx = t.value(logits.id);
  std::vector<T> probs(rows * k);
  std::vector<std::size_t> active;
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (target[r] < 0) continue;
    if (static_cast<std::size_t>(target[r]) >= k) {
      throw DimensionError("softmax_cross_entropy: target out of range");
    }
    active.push_back(r);
    const T* row = vx.data() + r * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    T z{0};
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - mx) / z;
    const double logp = static_cast<double>(row[target[r]] - mx) - std::log(static_cast<double>(z));
    loss -= std::max(logp, std::log(kFloor));
  }
  if (active.empty() || normalizer <= 0.0) {
    return t.emplace({}, {T{0}}, false);
  }
  auto out = t.emplace({}, {static_cast<T>(loss / normalizer)}, t.requires_grad(logits.id));
  t.on_backward(out, [&t, x = logits.id, o = out.id, k, target, normalizer,
                      probs = std::move(probs), active = std::move(active)] {
    const T g = t.grad(o)[0] / static_cast<T>(normalizer);
    auto gx = t.grad(x);
    for (std::size_t r : active) {
      const auto tr = static_cast<std::size_t>(target[r]);
      if (probs[r * k + tr] < T(kFloor)) continue;  // clamped: constant in x
      for (std::size_t j = 0; j < k; ++j) {
        gx[r * k + j] += g * (probs[r * k + j] - (j == tr ? T{1} : T{0}));
      }
    }
  });
  return out;
}

/// Scaled dot-product attention core for q, k, v [T x D] split into
/// `heads` column groups of width dh = D/heads:
///   out[:, group] = softmax(q_g k_g^T / sqrt(dh)) v_g.
/// Reports 4*T*T*D flops (scores plus weighting). Equivalent to slicing,
/// matmul, scale and softmax_axis per head, without the intermediates.
template <class T>
Var<T> multi_head_attention(Var<T> q, Var<T> k, Var<T> v, std::size_t heads) {
  Tape<T>& t = *q.tape;
  detail::require_rank(q.shape(), 2, "multi_head_attention");
  detail::require_same(q.shape(), k.shape(), "multi_head_attention");
  detail::require_same(q.shape(), v.shape(), "multi_head_attention");
  const std::size_t n = q.shape()[0], d = q.shape()[1];
  if (heads == 0 || d % heads) {
    throw ConfigError("multi_head_attention: width " + std::to_string(d) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const T alpha = T{1} / std::sqrt(static_cast<T>(dh));
  using Stride = Eigen::OuterStride<>;
  using Block = Eigen::Map<detail::RowMat<T>, 0, Stride>;
  using ConstBlock = Eigen::Map<const detail::RowMat<T>, 0, Stride>;
  const auto N = static_cast<Eigen::Index>(n), Dh = static_cast<Eigen::Index>(dh);
  const Stride stride(static_cast<Eigen::Index>(d));

  auto vq = t.value(q.id), vk = t.value(k.id), vv = t.value(v.id);
  std::vector<T> out(n * d);
  // Aligned storage fixes where Eigen's vectorized loops peel, so the exp
  // below gives the same bits wherever the allocator lands.
  std::vector<T, Eigen::aligned_allocator<T>> probs(heads * n * n);
  for (std::size_t h = 0; h < heads; ++h) {
    ConstBlock qh(vq.data() + h * dh, N, Dh, stride);
    ConstBlock kh(vk.data() + h * dh, N, Dh, stride);
    ConstBlock vh(vv.data() + h * dh, N, Dh, stride);
    auto p = detail::as_mat<T>(std::span<T>(probs).subspan(h * n * n, n * n), n, n);
    p.noalias() = alpha * (qh * kh.transpose());
    for (std::size_t r = 0; r < n; ++r) {
      Eigen::Map<Eigen::Array<T, 1, Eigen::Dynamic>> row(probs.data() + (h * n + r) * n, N);
      row = (row - row.maxCoeff()).exp();
      row /= row.sum();
    }
    Block oh(out.data() + h * dh, N, Dh, stride);
    oh.noalias() = p * vh;
  }
  t.flops().add(4ULL * n * n * d);
  const bool rg = t.requires_grad(q.id) || t.requires_grad(k.id) || t.requires_grad(v.id);
  auto res = t.emplace({n, d}, std::move(out), rg);
  t.on_backward(res, [&t, q = q.id, k = k.id, v = v.id, o = res.id, n, d, dh, heads, alpha,
                      probs = std::move(probs)] {
    const auto N = static_cast<Eigen::Index>(n), Dh = static_cast<Eigen::Index>(dh);
    const Stride stride(static_cast<Eigen::Index>(d));
    auto g = t.grad(o);
    auto vq = t.value(q), vk = t.value(k), vv = t.value(v);
    const bool gq = t.requires_grad(q), gk = t.requires_grad(k), gv = t.requires_grad(v);
    T* dq = gq ? t.grad(q).data() : nullptr;
    T* dk = gk ? t.grad(k).data() : nullptr;
    T* dv = gv ? t.grad(v).data() : nullptr;
    detail::RowMat<T> dp(N, N);
    for (std::size_t h = 0; h < heads; ++h) {
      auto p = detail::as_mat<T>(std::span<const T>(probs).subspan(h * n * n, n * n), n, n);
      ConstBlock goh(g.data() + h * dh, N, Dh, stride);
      ConstBlock qh(vq.data() + h * dh, N, Dh, stride);
      ConstBlock kh(vk.data() + h * dh, N, Dh, stride);
      ConstBlock vh(vv.data() + h * dh, N, Dh, stride);
      if (gv) {
        Block dvh(dv + h * dh, N, Dh, stride);
        dvh.noalias() += p.transpose() * goh;
      }
      if (!gq && !gk) continue;
      dp.noalias() = goh * vh.transpose();
      for (std::size_t r = 0; r < n; ++r) {
        T* drow = dp.data() + r * n;
        const T* prow = probs.data() + (h * n + r) * n;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += drow[j] * prow[j];
        for (std::size_t j = 0; j < n; ++j) drow[j] = prow[j] * (drow[j] - dot) * alpha;
      }
      if (gq) {
        Block dqh(dq + h * dh, N, Dh, stride);
        dqh.noalias() += dp * kh;
      }
      if (gk) {
        Block dkh(dk + h * dh, N, Dh, stride);
        dkh.noalias() += dp.transpose() * qh;
      }
    }
  });
  return res;
}

/// x W + b for x[m x in], W[in x out], b[out].
template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_bias(matmul(x, w), b);
}

}  // namespace rwlane::ops

#endif  // RWLANE_OPS_HPP
