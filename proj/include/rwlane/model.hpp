#ifndef RWLANE_MODEL_HPP
#define RWLANE_MODEL_HPP

#include <optional>
#include <vector>

#include "rwlane/backbone.hpp"
#include "rwlane/bev_encoder.hpp"
#include "rwlane/config.hpp"
#include "rwlane/losses.hpp"
#include "rwlane/params.hpp"
#include "rwlane/refine.hpp"
#include "rwlane/rowwise_head.hpp"

namespace rwlane {

template <class T>
struct StageResult {
  HeadOutput<T> heads;
  LaneProposals proposals;
};

template <class T>
struct ForwardResult {
  Var<T> bev;
  Var<T> features;
  StageResult<T> stage1;
  std::optional<StageResult<T>> stage2;
  std::vector<std::size_t> gated;
  std::optional<Var<T>> refined_features;

  /// Network output: stage 2 when it ran, else stage 1.
  const LaneProposals& proposals() const { return stage2 ? stage2->proposals : stage1.proposals; }
};

/// Parameter init seed of one module, derived from the run seed.
inline std::uint64_t module_seed(std::uint64_t run_seed, std::uint64_t module) {
  return mix_seed(mix_seed(run_seed) ^ module);
}

/// The full two-stage network: encoder -> correlator -> row-wise heads ->
/// (gate, gather, refine, scatter) -> second row-wise heads. All parameters
/// are registered regardless of `two_stage` so checkpoints have one layout.
template <class T>
class LaneNet {
 public:
  explicit LaneNet(RunConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const GridConfig& g = cfg_.grid;
    Rng enc_rng(module_seed(cfg_.seed, 0xE0));
    register_encoder(params_, g, enc_rng);
    Rng bb_rng(module_seed(cfg_.seed, cfg_.backbone.seed));
    register_backbone(params_, g, cfg_.backbone, bb_rng);
    Rng h1_rng(module_seed(cfg_.seed, cfg_.head.seed));
    register_rowwise_head(params_, "head1", cfg_.backbone.C_head, g.W_BEV, cfg_.head, h1_rng);
    Rng rf_rng(module_seed(cfg_.seed, cfg_.refine.seed));
    register_refine(params_, cfg_.refine, cfg_.backbone.C_head, cfg_.head.N_cls, g.H_BEV, rf_rng);
    Rng h2_rng(module_seed(cfg_.seed, cfg_.head.seed + 1));
    register_rowwise_head(params_, "head2", cfg_.backbone.C_head, g.W_BEV, cfg_.head, h2_rng);
  }

  LaneNet(RunConfig cfg, ParameterStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
  }

  const RunConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  ForwardResult<T> forward(Tape<T>& tape, const PointCloud& pc) { return forward(tape, pc, cfg_.two_stage); }

  ForwardResult<T> forward(Tape<T>& tape, const PointCloud& pc, bool two_stage) {
    const GridConfig& g = cfg_.grid;
    ForwardResult<T> r;
    r.bev = encode(tape, pc, g, params_);
    r.features = correlate(r.bev, g, cfg_.backbone, params_);
    r.stage1.heads = forward_heads(r.features, cfg_.head, params_, "head1");
    r.stage1.proposals = decode_proposals(r.stage1.heads);
    if (!two_stage) return r;

    r.gated = gate_lanes<T>(r.stage1.heads.ext.value(), cfg_.head.N_cls, g.H_BEV, cfg_.refine.T_ext);
    Var<T> refined = r.features;
    if (!r.gated.empty()) {
      auto tokens = gather_tokens(r.features, r.stage1.proposals, r.gated, cfg_.refine.W_thick);
      auto out = refine_tokens(tokens, cfg_.refine, cfg_.head.N_cls, params_);
      refined = scatter_tokens(r.features, out);
    }
    r.refined_features = refined;
    StageResult<T> s2;
    s2.heads = forward_heads(refined, cfg_.head, params_, "head2");
    s2.proposals = decode_proposals(s2.heads);
    r.stage2 = std::move(s2);
    return r;
  }

  /// Loss (Eq.-4 style four-term total, or stage-1 only) for one scene.
  TotalLoss<T> loss(const ForwardResult<T>& r, const LaneLabels& labels) const {
    std::optional<HeadOutput<T>> s2;
    if (r.stage2) s2 = r.stage2->heads;
    return total_loss(r.stage1.heads, s2, labels);
  }

  /// Deterministic forward pass without recording.
  LaneProposals infer(const PointCloud& pc) {
    Tape<T> tape(false);
    return forward(tape, pc).proposals();
  }

 private:
  RunConfig cfg_;
  ParameterStore<T> params_;
};

}  // namespace rwlane

#endif  // RWLANE_MODEL_HPP
