#ifndef RWLANE_EVAL_HPP
#define RWLANE_EVAL_HPP

#include <array>
#include <cstdint>
#include <cstdlib>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "rwlane/dataset.hpp"
#include "rwlane/model.hpp"
#include "rwlane/rowwise_head.hpp"
#include "rwlane/scene.hpp"

namespace rwlane {

struct MatchCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0;

  MatchCounts& operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const MatchCounts&) const = default;
};

struct Scores {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// P = TP/(TP+FP), R = TP/(TP+FN) (0 on empty denominators),
/// F1 = 2PR/(P+R) or 0 when P+R = 0.
inline Scores score(const MatchCounts& m) {
  Scores s;
  if (m.tp + m.fp) s.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
  if (m.tp + m.fn) s.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
  if (s.precision + s.recall > 0.0) {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  }
  return s;
}

/// Cell-wise matching per (class, row): a proposal within `tol_cols` of an
/// existing label is a TP; an unmatched proposal is a FP; an unmatched
/// label is a FN.
inline MatchCounts match_and_score(const LaneProposals& p, const LaneLabels& l, int tol_cols = 2) {
  if (p.N_cls != l.N_cls || p.H != l.H || p.W != l.W) {
    throw DimensionError("match_and_score: proposal grid does not match label grid");
  }
  MatchCounts m;
  for (std::size_t i = 0; i < p.column.size(); ++i) {
    const int pc = p.column[i], lc = l.column[i];
    if (pc >= 0 && lc >= 0 && std::abs(pc - lc) <= tol_cols) {
      ++m.tp;
      continue;
    }
    if (pc >= 0) ++m.fp;
    if (lc >= 0) ++m.fn;
  }
  return m;
}

inline constexpr std::size_t kOcclusionBuckets = 5;

struct EvalReport {
  MatchCounts overall;
  std::array<MatchCounts, kOcclusionBuckets> buckets{};
  std::array<std::size_t, kOcclusionBuckets> n_scenes{};

  void add_scene(const MatchCounts& m, int occluded_lane_count) {
    const std::size_t b = occlusion_bucket(occluded_lane_count);
    overall += m;
    buckets[b] += m;
    ++n_scenes[b];
  }

  Scores overall_scores() const { return score(overall); }
  Scores bucket_scores(std::size_t b) const { return score(buckets.at(b)); }

  /// Pooled counts over buckets >= `first` (e.g. 3 for "3 or more").
  MatchCounts pooled_from(std::size_t first) const {
    MatchCounts m;
    for (std::size_t b = first; b < kOcclusionBuckets; ++b) m += buckets[b];
    return m;
  }

  std::size_t total_scenes() const {
    std::size_t n = 0;
    for (auto v : n_scenes) n += v;
    return n;
  }
};

inline nlohmann::json counts_json(const MatchCounts& m) {
  const Scores s = score(m);
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
          {"tp", m.tp},               {"fp", m.fp},         {"fn", m.fn}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = counts_json(r.overall);
  j["n_scenes"] = r.total_scenes();
  nlohmann::json buckets = nlohmann::json::object();
  for (std::size_t b = 0; b < kOcclusionBuckets; ++b) {
    nlohmann::json e = counts_json(r.buckets[b]);
    e["n_scenes"] = r.n_scenes[b];
    buckets[occlusion_bucket_name(b)] = e;
  }
  j["buckets"] = buckets;
  return j;
}

/// Runs the model over every scene of the dataset and aggregates the
/// per-scene counts by occlusion bucket.
template <class T>
EvalReport evaluate(LaneNet<T>& model, const Dataset& ds, int tol_cols = 2) {
  const RunConfig& cfg = model.config();
  if (ds.N_cls != cfg.head.N_cls || ds.H != cfg.grid.H_BEV || ds.W != cfg.grid.W_BEV) {
    throw DimensionError("evaluate: dataset grid does not match model config");
  }
  EvalReport report;
  for (const auto& s : ds.scenes) {
    report.add_scene(match_and_score(model.infer(s.cloud), s.labels, tol_cols),
                     s.labels.occluded_lane_count);
  }
  return report;
}

}  // namespace rwlane

#endif  // RWLANE_EVAL_HPP
