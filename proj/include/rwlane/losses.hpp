#ifndef RWLANE_LOSSES_HPP
#define RWLANE_LOSSES_HPP

#include <optional>
#include <vector>

#include "rwlane/ops.hpp"
#include "rwlane/rowwise_head.hpp"
#include "rwlane/scene.hpp"

namespace rwlane {

struct LossReport {
  double l_ext_s1 = 0.0;
  double l_loc_s1 = 0.0;
  double l_ext_s2 = 0.0;
  double l_loc_s2 = 0.0;
  double l_total = 0.0;
};

namespace detail {
inline void require_label_dims(const Shape& s, const LaneLabels& labels, std::size_t last,
                               const char* op) {
  if (s != Shape{labels.N_cls, labels.H, last}) {
    throw DimensionError(std::string(op) + ": prediction " + shape_str(s) +
                         " does not match labels " +
                         shape_str({labels.N_cls, labels.H, last}));
  }
}
}  // namespace detail

/// Mean row cross-entropy of the 2-way existence softmax over all N_cls*H
/// rows.
template <class T>
Var<T> existence_loss(Var<T> ext, const LaneLabels& labels) {
  detail::require_label_dims(ext.shape(), labels, 2, "existence_loss");
  const std::size_t rows = labels.N_cls * labels.H;
  std::vector<int> target(rows);
  for (std::size_t r = 0; r < rows; ++r) target[r] = labels.column[r] >= 0 ? 1 : 0;
  return ops::softmax_cross_entropy(ops::reshape(ext, {rows, 2}), target,
                                    static_cast<double>(rows));
}

/// Cross-entropy over columns on rows whose label says the lane exists,
/// divided by the number of such rows. Exact 0 when there are none.
template <class T>
Var<T> location_loss(Var<T> loc, const LaneLabels& labels) {
  detail::require_label_dims(loc.shape(), labels, labels.W, "location_loss");
  const std::size_t rows = labels.N_cls * labels.H;
  return ops::softmax_cross_entropy(ops::reshape(loc, {rows, labels.W}), labels.column,
                                    static_cast<double>(labels.existing_rows()));
}

template <class T>
struct TotalLoss {
  Var<T> total;
  LossReport report;
};

/// (L_ext + L_loc) of stage 1 plus, when present, the same pair for
/// stage 2.
template <class T>
TotalLoss<T> total_loss(const HeadOutput<T>& stage1, const std::optional<HeadOutput<T>>& stage2,
                        const LaneLabels& labels) {
  TotalLoss<T> out;
  auto e1 = existence_loss(stage1.ext, labels);
  auto l1 = location_loss(stage1.loc, labels);
  out.report.l_ext_s1 = static_cast<double>(e1.item());
  out.report.l_loc_s1 = static_cast<double>(l1.item());
  out.total = ops::add(e1, l1);
  if (stage2) {
    auto e2 = existence_loss(stage2->ext, labels);
    auto l2 = location_loss(stage2->loc, labels);
    out.report.l_ext_s2 = static_cast<double>(e2.item());
    out.report.l_loc_s2 = static_cast<double>(l2.item());
    out.total = ops::add(out.total, ops::add(e2, l2));
  }
  out.report.l_total =
      out.report.l_ext_s1 + out.report.l_loc_s1 + out.report.l_ext_s2 + out.report.l_loc_s2;
  return out;
}

}  // namespace rwlane

#endif  // RWLANE_LOSSES_HPP
