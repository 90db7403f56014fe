#ifndef RWLANE_FLOPS_HPP
#define RWLANE_FLOPS_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "rwlane/backbone.hpp"
#include "rwlane/bev_encoder.hpp"
#include "rwlane/config.hpp"
#include "rwlane/refine.hpp"
#include "rwlane/rowwise_head.hpp"

namespace rwlane {

// Analytic forward cost. Only multiply-accumulate work is counted, two
// flops per MAC: an affine map n -> m over B positions costs 2*B*n*m.
// Elementwise work (activations, normalization, softmax) is not counted,
// which is also what the primitives report to a Tape's FlopTally.

struct FlopReport {
  std::map<std::string, std::uint64_t> by_module;
  std::uint64_t total = 0;
  std::optional<std::uint64_t> seg_head_reference;
  std::size_t n_lanes = 0;
  RunConfig config;
};

/// Per-cell segmentation head for comparison: a shared affine stack
/// C_head -> hidden -> N_cls + 1 applied at every one of the H*W cells.
inline std::uint64_t segmentation_head_flops(const RunConfig& cfg) {
  const std::uint64_t cells = cfg.grid.cells();
  const std::uint64_t c = cfg.backbone.C_head, h = cfg.head.hidden, k = cfg.head.N_cls + 1;
  return 2 * cells * (c * h + h * k);
}

/// `n_lanes` is the number of gated classes the refinement sees; it
/// defaults to N_cls (every class gated, the upper bound).
inline FlopReport count_flops(const RunConfig& cfg, std::optional<std::size_t> n_lanes = std::nullopt,
                              bool compare_seg_head = false) {
  cfg.validate();
  FlopReport r;
  r.config = cfg;
  const GridConfig& g = cfg.grid;
  const std::size_t C = cfg.backbone.C_head;
  r.by_module["encoder"] = encoder_flops(g);
  r.by_module["backbone"] = backbone_flops(g, cfg.backbone);
  r.by_module["head1"] = rowwise_head_flops(g.H_BEV, C, g.W_BEV, cfg.head);
  if (cfg.two_stage) {
    r.n_lanes = n_lanes.value_or(cfg.head.N_cls);
    r.by_module["refine"] = refine_flops(cfg.refine, C, g.H_BEV, r.n_lanes);
    r.by_module["head2"] = rowwise_head_flops(g.H_BEV, C, g.W_BEV, cfg.head);
  }
  for (const auto& [_, n] : r.by_module) r.total += n;
  if (compare_seg_head) r.seg_head_reference = segmentation_head_flops(cfg);
  return r;
}

inline nlohmann::json to_json(const FlopReport& r) {
  nlohmann::json j;
  j["flops_total"] = r.total;
  j["flops_by_module"] = r.by_module;
  j["n_lanes"] = r.n_lanes;
  if (r.seg_head_reference) {
    j["seg_head_reference_flops"] = *r.seg_head_reference;
    j["rowwise_head_flops"] = r.by_module.at("head1");
  }
  j["config"] = r.config;
  return j;
}

}  // namespace rwlane

#endif  // RWLANE_FLOPS_HPP
