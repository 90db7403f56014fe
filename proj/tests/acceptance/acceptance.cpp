// Acceptance runner: prints one PASS/FAIL line per criterion.
//
//   acceptance [--work-dir DIR] [--only 1,3,5]
//
// Criteria 5 and 6 train full-size models and take most of the runtime.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>

#include "../helpers.hpp"
#include "rwlane/checkpoint.hpp"
#include "rwlane/eval.hpp"
#include "rwlane/flops.hpp"
#include "rwlane/gradcheck.hpp"
#include "rwlane/losses.hpp"
#include "rwlane/model.hpp"
#include "rwlane/refine.hpp"
#include "rwlane/runtime.hpp"
#include "rwlane/train.hpp"

using namespace rwlane;
using rwlane::testing::jitter;
using rwlane::testing::random_tensor;
using rwlane::testing::toy_config;
using rwlane::testing::weighted_sum;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Collects sub-check failures; the first few are echoed in the detail line.
struct Checker {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  Outcome outcome(std::string summary) const {
    Outcome o{failures.empty(), std::move(summary)};
    for (std::size_t i = 0; i < failures.size() && i < 3; ++i) o.detail += "; " + failures[i];
    return o;
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- 1

using GradFn = std::function<Var<double>(Tape<double>&, ParameterStore<double>&)>;

ParameterStore<double> store_of(std::initializer_list<std::pair<const char*, Shape>> specs, std::uint64_t seed) {
  ParameterStore<double> p;
  Rng rng(seed);
  for (const auto& [name, shape] : specs) p.add(name, random_tensor(shape, rng));
  return p;
}

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker ck;
  double worst_linear = 0.0, worst_nonlinear = 0.0;
  auto check = [&](const char* name, const GradFn& f, ParameterStore<double>& p, bool linear) {
    const auto rep = finite_diff_check(f, p, {1e-5, 0, 7});
    const double bound = linear ? 1e-6 : 1e-4;
    (linear ? worst_linear : worst_nonlinear) = std::max(linear ? worst_linear : worst_nonlinear, rep.max_rel_error);
    ck.expect(rep.max_rel_error <= bound, std::string(name) + " err " + fmt("%.2e", rep.max_rel_error));
  };

  auto p = store_of({{"x", {3, 4}}, {"y", {3, 4}}, {"b", {4}}, {"w", {4, 5}}, {"wb", {5}}, {"m", {4, 2}}}, 1);
  check("matmul", [](auto& t, auto& s) { return weighted_sum(ops::matmul(s.var(t, "x"), s.var(t, "m"))); }, p, true);
  check("add", [](auto& t, auto& s) { return weighted_sum(ops::add(s.var(t, "x"), s.var(t, "y"))); }, p, true);
  check("mul", [](auto& t, auto& s) { return weighted_sum(ops::mul(s.var(t, "x"), s.var(t, "y"))); }, p, true);
  check("add_bias", [](auto& t, auto& s) { return weighted_sum(ops::add_bias(s.var(t, "x"), s.var(t, "b"))); }, p, true);
  check("scale", [](auto& t, auto& s) { return weighted_sum(ops::scale(s.var(t, "x"), -2.5)); }, p, true);
  check("sum", [](auto& t, auto& s) { return ops::sum(s.var(t, "x")); }, p, true);
  check("transpose", [](auto& t, auto& s) { return weighted_sum(ops::transpose(s.var(t, "x"))); }, p, true);
  check("reshape", [](auto& t, auto& s) { return weighted_sum(ops::reshape(s.var(t, "x"), {2, 6})); }, p, true);
  check("slice_cols", [](auto& t, auto& s) { return weighted_sum(ops::slice_cols(s.var(t, "x"), 1, 2)); }, p, true);
  check("concat_cols", [](auto& t, auto& s) {
    return weighted_sum(ops::concat_cols<double>({s.var(t, "x"), s.var(t, "y")}));
  }, p, true);
  check("linear", [](auto& t, auto& s) {
    return weighted_sum(ops::linear(s.var(t, "x"), s.var(t, "w"), s.var(t, "wb")));
  }, p, true);

  auto g = store_of({{"x", {12}}, {"src", {5}}}, 2);
  check("gather", [](auto& t, auto& s) {
    return weighted_sum(ops::gather(s.var(t, "x"), {3, -1, 0, 3, 11, 7}, {2, 3}));
  }, g, true);
  check("scatter_mean", [](auto& t, auto& s) {
    return weighted_sum(ops::scatter_mean(s.var(t, "x"), s.var(t, "src"), {2, 9, 2, -1, 9}));
  }, g, true);

  auto n = store_of({{"x", {4, 6}}, {"g", {6}}, {"b", {6}}, {"r", {2, 3, 4}}, {"q", {5, 8}}, {"k", {5, 8}}, {"v", {5, 8}}}, 3);
  check("relu", [](auto& t, auto& s) { return weighted_sum(ops::relu(s.var(t, "x"))); }, n, false);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    check("softmax", [axis](auto& t, auto& s) { return weighted_sum(ops::softmax_axis(s.var(t, "r"), axis)); }, n, false);
  }
  check("layer_norm", [](auto& t, auto& s) {
    return weighted_sum(ops::layer_norm(s.var(t, "x"), s.var(t, "g"), s.var(t, "b"), 1e-5));
  }, n, false);
  check("segment_max", [](auto& t, auto& s) { return weighted_sum(ops::segment_max(s.var(t, "x"), {0, 2, 0, -1}, 4)); }, n, false);
  check("softmax_cross_entropy", [](auto& t, auto& s) {
    return ops::softmax_cross_entropy(s.var(t, "x"), {2, -1, 5, 0}, 3.0);
  }, n, false);
  check("multi_head_attention", [](auto& t, auto& s) {
    return weighted_sum(ops::multi_head_attention(s.var(t, "q"), s.var(t, "k"), s.var(t, "v"), 2));
  }, n, false);

  // full two-stage loss on the toy grid, every coordinate, both classes gated
  RunConfig cfg = toy_config();
  cfg.refine.T_ext = 0.0;
  LaneNet<double> net(cfg);
  jitter(net.params(), 0.3, 13);
  for (const char* prefix : {"head1", "head2"}) {
    auto& b = net.params().at(std::string(prefix) + ".ext_b2");
    for (std::size_t c = 0; c < cfg.head.N_cls; ++c) b.data[c * 2 + 1] += 3.0;
  }
  const Scene scene = generate_scene(cfg.scene, 4);
  {
    Tape<double> t(false);
    ck.expect(net.forward(t, scene.cloud).gated.size() == cfg.head.N_cls, "toy model did not gate every class");
  }
  check("two-stage loss", [&](auto& t, auto&) {
    auto r = net.forward(t, scene.cloud);
    return net.loss(r, scene.labels).total;
  }, net.params(), false);

  const double secs = seconds_since(t0);
  ck.expect(secs < 120.0, "runtime " + fmt("%.1fs", secs));
  return ck.outcome("linear max " + fmt("%.2e", worst_linear) + ", nonlinear max " + fmt("%.2e", worst_nonlinear) +
                    ", " + fmt("%.1fs", secs));
}

// ---------------------------------------------------------------- 2

Outcome analytic_identities() {
  Checker ck;
  RunConfig cfg;
  const std::size_t N = cfg.head.N_cls, H = cfg.grid.H_BEV, W = cfg.grid.W_BEV;
  Rng rng(21);
  LaneLabels labels(N, H, W);
  for (auto& v : labels.column) v = rng.uniform() < 0.4 ? static_cast<int>(rng.below(W)) : -1;
  labels.column[0] = 3;

  Tape<double> t(false);
  const double ext = existence_loss(t.constant(Tensor<double>({N, H, 2})), labels).item();
  const double loc = location_loss(t.constant(Tensor<double>({N, H, W})), labels).item();
  ck.expect(std::abs(ext - std::log(2.0)) <= 1e-9, "existence " + fmt("%.12f", ext));
  ck.expect(std::abs(loc - std::log(static_cast<double>(W))) <= 1e-9, "location " + fmt("%.12f", loc));

  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<double> e1 = random_tensor({N, H, 2}, rng, 3.0), l1 = random_tensor({N, H, W}, rng, 3.0);
    Tensor<double> e2 = random_tensor({N, H, 2}, rng, 3.0), l2 = random_tensor({N, H, W}, rng, 3.0);
    Tape<double> u(false);
    const auto tl = total_loss(HeadOutput<double>{u.constant(e1), u.constant(l1)},
                               std::optional(HeadOutput<double>{u.constant(e2), u.constant(l2)}), labels);
    Tape<double> v(false);
    const double parts = existence_loss(v.constant(e1), labels).item() + location_loss(v.constant(l1), labels).item() +
                         existence_loss(v.constant(e2), labels).item() + location_loss(v.constant(l2), labels).item();
    worst = std::max(worst, std::abs(tl.total.item() - parts));
  }
  ck.expect(worst <= 1e-12, "total vs parts " + fmt("%.2e", worst));
  return ck.outcome("|ext-ln2| " + fmt("%.1e", std::abs(ext - std::log(2.0))) + ", |loc-lnW| " +
                    fmt("%.1e", std::abs(loc - std::log(static_cast<double>(W)))) + ", total-sum " + fmt("%.1e", worst));
}

// ---------------------------------------------------------------- 3

Outcome oracle_equivalence() {
  Checker ck;
  Rng rng(31);
  int gate_bad = 0, decode_bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t N = 1 + rng.below(6), H = 1 + rng.below(48);
    const double T_ext = rng.uniform();
    std::vector<double> ext(N * H * 2);
    for (auto& v : ext) v = static_cast<double>(rng.uniform_int(-2, 2));
    std::vector<std::size_t> expect;
    for (std::size_t c = 0; c < N; ++c) {
      std::size_t rows = 0;
      for (std::size_t h = 0; h < H; ++h) rows += ext[(c * H + h) * 2 + 1] > ext[(c * H + h) * 2] ? 1 : 0;
      if (static_cast<double>(rows) / static_cast<double>(H) > T_ext) expect.push_back(c);
    }
    gate_bad += gate_lanes<double>(ext, N, H, T_ext) != expect ? 1 : 0;

    const std::size_t W = 1 + rng.below(12);
    std::vector<double> loc(N * H * W);
    for (auto& v : loc) v = static_cast<double>(rng.uniform_int(-3, 3));
    const auto p = decode_proposals<double>(ext, loc, N, H, W);
    for (std::size_t r = 0; r < N * H; ++r) {
      int col = 0;
      for (std::size_t w = 0; w < W; ++w)
        if (loc[r * W + w] > loc[r * W + col]) col = static_cast<int>(w);
      const int want = ext[r * 2 + 1] > ext[r * 2] ? col : -1;
      decode_bad += p.column[r] != want ? 1 : 0;
    }
  }
  ck.expect(gate_bad == 0, std::to_string(gate_bad) + " gate mismatches");
  ck.expect(decode_bad == 0, std::to_string(decode_bad) + " decode mismatches");

  // round trip on disjoint footprints, including both grid edges
  int scatter_bad = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t C = 1 + rng.below(4), H = 2 + rng.below(6), W = 9 + rng.below(20), N = 2;
    const std::size_t W_thick = trial % 2 ? 3 : 1;
    const auto fm = random_tensor({C, H, W}, rng);
    LaneProposals p(N, H, W);
    // class 0 on the left half, class 1 on the right half: windows never meet
    for (std::size_t h = 0; h < H; ++h) {
      p.column[h] = static_cast<int>(rng.below(W / 2 - 1));
      p.column[H + h] = static_cast<int>(W / 2 + 1 + rng.below(W - W / 2 - 1));
    }
    p.column[0] = 0;
    p.column[2 * H - 1] = static_cast<int>(W - 1);
    Tape<double> t(false);
    auto f = t.constant(fm);
    const auto back = scatter_tokens(f, gather_tokens(f, p, {0, 1}, W_thick));
    scatter_bad += std::memcmp(back.value().data(), fm.data.data(), fm.data.size() * sizeof(double)) != 0 ? 1 : 0;
  }
  ck.expect(scatter_bad == 0, std::to_string(scatter_bad) + " scatter(gather) mismatches");
  return ck.outcome("1000 gate maps, 1000 decode maps, 200 round trips");
}

// ---------------------------------------------------------------- 4

Outcome flop_counter() {
  Checker ck;
  std::vector<RunConfig> configs(3, toy_config());
  configs[1].backbone.depth = 2;
  configs[1].refine.W_thick = 5;
  configs[2].grid.H_BEV = 8;
  configs[2].grid.W_BEV = 12;
  configs[2].head.N_cls = 3;
  configs[2].backbone.C_head = 4;
  configs[2].refine.depth = 2;
  configs[2].scene.n_lanes_max = 3;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    RunConfig& cfg = configs[i];
    cfg.refine.T_ext = 0.0;
    cfg.sync_scene_to_grid();
    LaneNet<double> net(cfg);
    jitter(net.params(), 0.5, 3);
    const Scene scene = generate_scene(cfg.scene, 17);
    Tape<double> t(false);
    const auto r = net.forward(t, scene.cloud);
    const std::size_t n = r.gated.size();
    const FlopReport rep = count_flops(cfg, n);

    // hand-derived: 2 per multiply-accumulate, layer by layer
    const auto& g = cfg.grid;
    const auto& b = cfg.backbone;
    const auto& h = cfg.head;
    const auto& rf = cfg.refine;
    const std::uint64_t cells = g.H_BEV * g.W_BEV, F = 5 + g.extra_channels;
    const std::uint64_t enc = 2 * cells * g.max_points_per_cell * F * g.C_BEV;
    const std::uint64_t T = cells / (b.patch * b.patch), D = b.embed_dim, Pin = g.C_BEV * b.patch * b.patch;
    const std::uint64_t Pout = b.C_head * b.patch * b.patch;
    const std::uint64_t block = [](std::uint64_t T, std::uint64_t D, std::uint64_t Fh) {
      return 8 * T * D * D + 4 * T * T * D + 4 * T * D * Fh;
    }(T, D, D * b.ffn_mult);
    const std::uint64_t bb = 2 * T * Pin * D + b.depth * block + 2 * T * D * Pout;
    const std::uint64_t in = b.C_head * g.W_BEV;
    const std::uint64_t head = 2 * g.H_BEV * (2 * in * h.hidden + h.hidden * h.N_cls * (2 + g.W_BEV));
    const std::uint64_t L = n * g.H_BEV, Dr = b.C_head * rf.W_thick;
    const std::uint64_t refine = n == 0 ? 0 : rf.depth * [](std::uint64_t T, std::uint64_t D, std::uint64_t Fh) {
      return 8 * T * D * D + 4 * T * T * D + 4 * T * D * Fh;
    }(L, Dr, Dr * rf.ffn_mult);
    const std::map<std::string, std::uint64_t> hand{
        {"encoder", enc}, {"backbone", bb}, {"head1", head}, {"refine", refine}, {"head2", head}};
    const std::string tag = "config " + std::to_string(i);
    ck.expect(rep.by_module == hand, tag + ": counter != hand formula");
    std::uint64_t hand_total = 0;
    for (const auto& [k, v] : hand) hand_total += v;
    ck.expect(rep.total == hand_total, tag + ": total != hand total");

    auto expect = rep.by_module;
    std::erase_if(expect, [](const auto& kv) { return kv.second == 0; });
    ck.expect(t.flops().by_scope() == expect, tag + ": counter != instrumented tally");
    ck.expect(t.flops().total() == rep.total, tag + ": totals differ from tally");
  }
  return ck.outcome("3 configs, hand formulas and tape tally");
}

// ---------------------------------------------------------------- 5, 6

RunConfig default_run(std::uint64_t seed, bool two_stage, const std::string& dtype) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.two_stage = two_stage;
  cfg.dtype = dtype;
  cfg.sync_scene_to_grid();
  cfg.validate();
  return cfg;
}

struct Datasets {
  Dataset train, clean, occluded;
};

Datasets make_datasets() {
  RunConfig cfg = default_run(1, true, "f64");
  Datasets d;
  d.train = generate_dataset(cfg.scene, 512, 1);
  SceneConfig clean = cfg.scene;
  clean.n_occluders_min = clean.n_occluders_max = 0;
  d.clean = generate_dataset(clean, 128, 1000003);
  d.occluded = generate_dataset(cfg.scene, 256, 2000003);
  return d;
}

template <class T>
LaneNet<T> train_run(const RunConfig& cfg, const Dataset& data, double& seconds) {
  LaneNet<T> net(cfg);
  AdamState adam;
  TrainOptions opt;
  opt.on_epoch = [&](const EpochLog& e) {
    std::fprintf(stderr, "    seed %llu %s %s epoch %2zu loss %.4f (%.0fs)\n",
                 static_cast<unsigned long long>(cfg.seed), cfg.two_stage ? "two-stage" : "one-stage",
                 cfg.dtype.c_str(), e.epoch, e.mean.l_total, e.seconds);
  };
  const auto t0 = std::chrono::steady_clock::now();
  train(net, adam, data, opt);
  seconds = seconds_since(t0);
  return net;
}

Outcome end_to_end(const Datasets& d) {
  Checker ck;
  double secs = 0.0;
  auto net = train_run<double>(default_run(1, true, "f64"), d.train, secs);
  const double f1 = evaluate(net, d.clean).overall_scores().f1;
  ck.expect(f1 >= 0.85, "clean F1 " + fmt("%.4f", f1) + " < 0.85");
  ck.expect(secs <= 1800.0, "training took " + fmt("%.0fs", secs));
  return ck.outcome("clean F1 " + fmt("%.4f", f1) + ", training " + fmt("%.0fs", secs));
}

Outcome occlusion_direction(const Datasets& d) {
  Checker ck;
  double one_bucket = 0, two_bucket = 0, one_all = 0, two_all = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    for (bool two : {false, true}) {
      double secs = 0.0;
      auto net = train_run<float>(default_run(seed, two, "f32"), d.train, secs);
      const EvalReport rep = evaluate(net, d.occluded);
      const double bucket = score(rep.pooled_from(3)).f1, all = rep.overall_scores().f1;
      std::fprintf(stderr, "    seed %llu %s: >=3 bucket F1 %.4f, overall F1 %.4f\n",
                   static_cast<unsigned long long>(seed), two ? "two-stage" : "one-stage", bucket, all);
      (two ? two_bucket : one_bucket) += bucket / 3.0;
      (two ? two_all : one_all) += all / 3.0;
    }
  }
  ck.expect(two_bucket >= one_bucket, "two-stage bucket F1 below one-stage");
  ck.expect(two_all >= one_all - 0.01, "two-stage overall F1 more than 0.01 below one-stage");
  return ck.outcome(">=3 bucket F1 two " + fmt("%.4f", two_bucket) + " vs one " + fmt("%.4f", one_bucket) +
                    ", overall two " + fmt("%.4f", two_all) + " vs one " + fmt("%.4f", one_all));
}

// ---------------------------------------------------------------- 7

template <class T>
std::pair<std::vector<std::uint8_t>, std::string> determinism_run(const RunConfig& cfg, const Dataset& train_set,
                                                                  const Dataset& holdout, const std::string& dir) {
  LaneNet<T> net(cfg);
  AdamState adam;
  TrainOptions opt;
  opt.out_dir = dir;
  train(net, adam, train_set, opt);
  return {detail::read_file(dir + "/checkpoint.rwln"), to_json(evaluate(net, holdout)).dump()};
}

Outcome determinism(const std::string& work) {
  Checker ck;
  RunConfig cfg = default_run(5, true, "f64");
  cfg.epochs = 2;
  const Dataset train_set = generate_dataset(cfg.scene, 12, 41);
  const Dataset holdout = generate_dataset(cfg.scene, 8, 42);
  const auto a = determinism_run<double>(cfg, train_set, holdout, work + "/det_a");
  const auto b = determinism_run<double>(cfg, train_set, holdout, work + "/det_b");
  ck.expect(a.first == b.first, "f64 checkpoints differ");
  ck.expect(a.second == b.second, "f64 eval reports differ");
  cfg.dtype = "f32";
  const auto c = determinism_run<float>(cfg, train_set, holdout, work + "/det_c");
  const auto e = determinism_run<float>(cfg, train_set, holdout, work + "/det_d");
  ck.expect(c.first == e.first, "f32 checkpoints differ");
  ck.expect(c.second == e.second, "f32 eval reports differ");
  return ck.outcome("f64 and f32 runs repeated, " + std::to_string(a.first.size()) + "-byte checkpoints");
}

// ---------------------------------------------------------------- 8

Outcome degenerate_inputs() {
  Checker ck;
  auto guarded = [&](const char* what, const std::function<void()>& f) {
    try {
      f();
    } catch (const std::exception& e) {
      ck.expect(false, std::string(what) + " threw: " + e.what());
    }
  };

  guarded("empty cloud", [&] {
    RunConfig cfg = toy_config();
    LaneNet<double> net(cfg);
    PointCloud empty;
    const Scene scene = generate_scene(cfg.scene, 3);
    Tape<double> t;
    const auto r = net.forward(t, empty);
    const auto& bev = r.bev.value();
    ck.expect(std::all_of(bev.begin(), bev.end(), [](double v) { return v == 0.0; }), "empty cloud BEV not zero");
    const auto loss = net.loss(r, scene.labels);
    ck.expect(std::isfinite(loss.report.l_total), "empty cloud loss not finite");
    t.backward(loss.total);
    const auto p = net.infer(empty);
    ck.expect(p.N_cls == cfg.head.N_cls && p.H == cfg.grid.H_BEV, "empty cloud proposal dims");
  });

  guarded("zero gated lanes", [&] {
    RunConfig cfg = toy_config();
    cfg.refine.T_ext = 1.0;
    LaneNet<double> net(cfg);
    const Scene scene = generate_scene(cfg.scene, 5);
    Tape<double> t;
    const auto r = net.forward(t, scene.cloud);
    ck.expect(r.gated.empty(), "gate with T_ext=1 selected a class");
    ck.expect(r.stage2.has_value() && r.refined_features->id == r.features.id,
              "stage 2 did not see the unrefined feature map");
    const auto loss = net.loss(r, scene.labels);
    ck.expect(std::isfinite(loss.report.l_total), "zero-gate loss not finite");
    t.backward(loss.total);
    for (const auto& name : net.params().names())
      if (name.starts_with("refine.")) ck.expect(!net.params().at(name).has_grad(), name + " got a gradient");
  });

  guarded("zero existing rows", [&] {
    RunConfig cfg = toy_config();
    LaneNet<double> net(cfg);
    jitter(net.params(), 0.2, 8);
    const Scene scene = generate_scene(cfg.scene, 6);
    const LaneLabels none(cfg.head.N_cls, cfg.grid.H_BEV, cfg.grid.W_BEV);
    Tape<double> t;
    const auto r = net.forward(t, scene.cloud);
    const auto loss = net.loss(r, none);
    ck.expect(loss.report.l_loc_s1 == 0.0 && loss.report.l_loc_s2 == 0.0, "location loss not exactly 0");
    ck.expect(std::isfinite(loss.report.l_total), "no-row loss not finite");
    t.backward(loss.total);
    for (const char* n : {"head1.loc_w2", "head1.loc_b2"}) {
      const auto& gr = net.params().at(n).grad;
      ck.expect(std::all_of(gr.begin(), gr.end(), [](double v) { return v == 0.0; }),
                std::string(n) + " gradient not zero");
    }
    const MatchCounts m = match_and_score(r.proposals(), none);
    ck.expect(m.tp == 0 && m.fn == 0, "empty labels produced matches");
    const Scores s = score(m);
    ck.expect(s.recall == 0.0 && std::isfinite(s.f1), "empty-label scores");
  });

  guarded("window at grid edges", [&] {
    const std::size_t C = 2, H = 3, W = 6;
    Rng rng(9);
    const auto fm = random_tensor({C, H, W}, rng);
    LaneProposals p(2, H, W);
    for (std::size_t h = 0; h < H; ++h) {
      p.column[h] = 0;
      p.column[H + h] = static_cast<int>(W - 1);
    }
    Tape<double> t(false);
    auto f = t.constant(fm);
    const auto tok = gather_tokens(f, p, {0, 1}, 5);
    const auto& v = tok.tokens.value();
    const std::size_t D = C * 5;
    bool pad_ok = true, body_ok = true;
    for (std::size_t k = 0; k < tok.coords.size(); ++k) {
      for (std::size_t j = 0; j < 5; ++j) {
        const int col = tok.coords[k].center - 2 + static_cast<int>(j);
        for (std::size_t c = 0; c < C; ++c) {
          const double got = v[k * D + j * C + c];
          if (col < 0 || col >= static_cast<int>(W)) {
            pad_ok = pad_ok && got == 0.0;
          } else {
            body_ok = body_ok && got == fm.data[(c * H + tok.coords[k].row) * W + static_cast<std::size_t>(col)];
          }
        }
      }
    }
    ck.expect(pad_ok, "out-of-grid token entries not zero");
    ck.expect(body_ok, "in-grid token entries wrong");
    const auto back = scatter_tokens(f, tok);
    ck.expect(std::memcmp(back.value().data(), fm.data.data(), fm.data.size() * sizeof(double)) == 0,
              "edge scatter changed the map");
  });
  return ck.outcome("empty cloud, zero gate, zero rows, edge windows");
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Acceptance criteria"};
  std::string work = (std::filesystem::temp_directory_path() / "rwlane_acceptance").string();
  std::vector<int> only;
  app.add_option("--work-dir", work, "Scratch directory");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',')->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);
  std::filesystem::create_directories(work);

  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int k) { return selected.empty() || selected.contains(k); };

  std::optional<Datasets> data;
  auto datasets = [&]() -> const Datasets& {
    if (!data) data = make_datasets();
    return *data;
  };

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, gradient_suite},
      {2, analytic_identities},
      {3, oracle_equivalence},
      {4, flop_counter},
      {5, [&] { return end_to_end(datasets()); }},
      {6, [&] { return occlusion_direction(datasets()); }},
      {7, [&] { return determinism(work); }},
      {8, degenerate_inputs},
  };

  int failed = 0;
  for (const auto& [k, run] : criteria) {
    if (!wanted(k)) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s  %s\n", k, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
