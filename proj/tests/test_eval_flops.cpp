#include <gtest/gtest.h>

#include <set>

#include "helpers.hpp"
#include "rwlane/eval.hpp"
#include "rwlane/flops.hpp"
#include "rwlane/model.hpp"

using namespace rwlane;

namespace {

LaneLabels random_labels(std::size_t N, std::size_t H, std::size_t W, Rng& rng) {
  LaneLabels l(N, H, W);
  for (auto& v : l.column) v = rng.uniform() < 0.5 ? static_cast<int>(rng.below(W)) : -1;
  return l;
}

LaneProposals as_proposals(const LaneLabels& l) {
  LaneProposals p(l.N_cls, l.H, l.W);
  p.column = l.column;
  return p;
}

}  // namespace

TEST(Match, IdenticalProposalsAreAllTruePositives) {
  Rng rng(1);
  const auto l = random_labels(6, 48, 32, rng);
  const auto m = match_and_score(as_proposals(l), l);
  EXPECT_EQ(m.tp, l.existing_rows());
  EXPECT_EQ(m.fp, 0u);
  EXPECT_EQ(m.fn, 0u);
}

TEST(Match, EmptyProposalsAreAllFalseNegatives) {
  Rng rng(2);
  const auto l = random_labels(6, 48, 32, rng);
  const auto m = match_and_score(LaneProposals(6, 48, 32), l);
  EXPECT_EQ(m.tp, 0u);
  EXPECT_EQ(m.fn, l.existing_rows());
}

TEST(Match, ToleranceZeroIsSetAlgebra) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto l = random_labels(3, 10, 6, rng);
    const auto pl = random_labels(3, 10, 6, rng);
    std::set<std::tuple<std::size_t, int>> P, L;
    for (std::size_t r = 0; r < 30; ++r) {
      if (pl.column[r] >= 0) P.insert({r, pl.column[r]});
      if (l.column[r] >= 0) L.insert({r, l.column[r]});
    }
    std::size_t inter = 0;
    for (const auto& e : P) inter += L.contains(e) ? 1 : 0;
    const auto m = match_and_score(as_proposals(pl), l, 0);
    EXPECT_EQ(m.tp, inter);
    EXPECT_EQ(m.fp, P.size() - inter);
    EXPECT_EQ(m.fn, L.size() - inter);
  }
}

TEST(Match, ToleranceWindow) {
  LaneLabels l(1, 1, 10);
  l.col(0, 0) = 5;
  LaneProposals p(1, 1, 10);
  p.column[0] = 7;
  EXPECT_EQ(match_and_score(p, l, 2).tp, 1u);
  p.column[0] = 8;
  const auto m = match_and_score(p, l, 2);
  EXPECT_EQ(m.fp, 1u);
  EXPECT_EQ(m.fn, 1u);
}

TEST(Scores, HarmonicMean) {
  const Scores s = score({2, 0, 2});  // P = 1, R = 0.5
  EXPECT_DOUBLE_EQ(s.precision, 1.0);
  EXPECT_DOUBLE_EQ(s.recall, 0.5);
  EXPECT_NEAR(s.f1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(score({0, 0, 0}).f1, 0.0);
  EXPECT_EQ(score({0, 3, 0}).f1, 0.0);
}

TEST(Scores, AddingTruePositiveNeverLowersF1) {
  for (std::uint64_t tp = 0; tp < 12; ++tp)
    for (std::uint64_t fp = 0; fp < 12; ++fp)
      for (std::uint64_t fn = 0; fn < 12; ++fn)
        EXPECT_GE(score({tp + 1, fp, fn}).f1, score({tp, fp, fn}).f1);
}

TEST(EvalReport, PerfectSceneScoresOne) {
  Rng rng(4);
  auto l = random_labels(2, 5, 6, rng);
  l.col(0, 0) = 1;
  l.occluded_lane_count = 2;
  EvalReport r;
  r.add_scene(match_and_score(as_proposals(l), l), l.occluded_lane_count);
  EXPECT_EQ(r.overall_scores().f1, 1.0);
  EXPECT_EQ(r.bucket_scores(2).f1, 1.0);
  EXPECT_EQ(r.n_scenes[2], 1u);
}

TEST(EvalReport, BucketsMatchBruteForceRegrouping) {
  Rng rng(5);
  EvalReport r;
  std::vector<std::pair<MatchCounts, int>> scenes;
  for (int i = 0; i < 200; ++i) {
    const auto l = random_labels(2, 6, 8, rng);
    const auto p = random_labels(2, 6, 8, rng);
    const int occ = static_cast<int>(rng.below(7));
    const auto m = match_and_score(as_proposals(p), l);
    scenes.push_back({m, occ});
    r.add_scene(m, occ);
  }
  for (std::size_t b = 0; b < 5; ++b) {
    MatchCounts sum;
    std::size_t n = 0;
    for (const auto& [m, occ] : scenes) {
      const bool in = b < 4 ? occ == static_cast<int>(b) : occ >= 4;
      if (!in) continue;
      sum += m;
      ++n;
    }
    EXPECT_EQ(r.buckets[b], sum) << b;
    EXPECT_EQ(r.n_scenes[b], n);
  }
  MatchCounts all;
  for (const auto& [m, occ] : scenes) all += m;
  EXPECT_EQ(r.overall, all);
  const auto j = to_json(r);
  for (const char* key : {"precision", "recall", "f1", "buckets"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_TRUE(j["buckets"].contains("4-6"));
}

TEST(Flops, SingleAffine) {
  Tape<double> t(false);
  ops::linear(t.constant(Tensor<double>({1, 4})), t.constant(Tensor<double>({4, 3})),
              t.constant(Tensor<double>({3})));
  EXPECT_EQ(t.flops().total(), 24u);
}

TEST(Flops, TotalIsSumOfPartsAndPure) {
  RunConfig cfg;
  const auto a = count_flops(cfg, std::nullopt, true);
  std::uint64_t sum = 0;
  for (const auto& [_, n] : a.by_module) sum += n;
  EXPECT_EQ(a.total, sum);
  EXPECT_EQ(count_flops(cfg).total, a.total);
  EXPECT_EQ(a.by_module.size(), 5u);
  EXPECT_LT(a.by_module.at("head1"), *a.seg_head_reference * 10);
  // hand formula for the reference head
  EXPECT_EQ(*a.seg_head_reference, 2ULL * 48 * 32 * (64 * 128 + 128 * 7));
}

TEST(Flops, DoublingRowsDoublesHeadCounts) {
  RunConfig cfg;
  RunConfig tall = cfg;
  tall.grid.H_BEV *= 2;
  tall.sync_scene_to_grid();
  const auto a = count_flops(cfg), b = count_flops(tall);
  EXPECT_EQ(b.by_module.at("head1"), 2 * a.by_module.at("head1"));
  EXPECT_EQ(b.by_module.at("head2"), 2 * a.by_module.at("head2"));
}

TEST(Flops, OneStageHasNoRefinementOrSecondHead) {
  RunConfig cfg;
  cfg.two_stage = false;
  const auto r = count_flops(cfg);
  EXPECT_FALSE(r.by_module.contains("refine"));
  EXPECT_FALSE(r.by_module.contains("head2"));
}

TEST(Flops, MatchesInstrumentedTally) {
  std::vector<RunConfig> configs(3, rwlane::testing::toy_config());
  configs[1].backbone.depth = 2;
  configs[1].refine.W_thick = 5;
  configs[2].grid.H_BEV = 8;
  configs[2].grid.W_BEV = 12;
  configs[2].head.N_cls = 3;
  configs[2].backbone.C_head = 4;
  configs[2].refine.depth = 2;
  configs[2].scene.n_lanes_max = 3;
  for (auto& cfg : configs) {
    cfg.refine.T_ext = 0.0;
    cfg.sync_scene_to_grid();
    LaneNet<double> net(cfg);
    rwlane::testing::jitter(net.params(), 0.5, 3);
    const Scene scene = generate_scene(cfg.scene, 17);
    Tape<double> t(false);
    const auto r = net.forward(t, scene.cloud);
    const auto expect = count_flops(cfg, r.gated.size());
    auto modules = expect.by_module;
    std::erase_if(modules, [](const auto& kv) { return kv.second == 0; });  // refine with no gated lane
    EXPECT_EQ(t.flops().by_scope(), modules);
    EXPECT_EQ(t.flops().total(), expect.total);
  }
}
