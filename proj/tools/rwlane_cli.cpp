// rwlane command-line tool: synth, train, eval, infer, flops.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "rwlane/checkpoint.hpp"
#include "rwlane/config.hpp"
#include "rwlane/dataset.hpp"
#include "rwlane/eval.hpp"
#include "rwlane/flops.hpp"
#include "rwlane/runtime.hpp"
#include "rwlane/train.hpp"

namespace {

using namespace rwlane;

RunConfig config_or_default(const std::string& path) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  cfg.sync_scene_to_grid();
  cfg.validate();
  return cfg;
}

template <class T>
int run_train(const RunConfig& cfg, const std::string& data_path, const std::string& out) {
  const Dataset data = read_dataset(data_path);
  LaneNet<T> model(cfg);
  AdamState adam;
  TrainOptions opt;
  opt.out_dir = out;
  opt.on_epoch = [&](const EpochLog& e) {
    std::printf("epoch %2zu  l_total %.6f  (ext1 %.4f loc1 %.4f ext2 %.4f loc2 %.4f)  %.1fs\n",
                e.epoch, e.mean.l_total, e.mean.l_ext_s1, e.mean.l_loc_s1, e.mean.l_ext_s2,
                e.mean.l_loc_s2, e.seconds);
    std::fflush(stdout);
  };
  train(model, adam, data, opt);
  std::printf("checkpoint: %s/checkpoint.rwln\n", out.c_str());
  return 0;
}

// Checkpoints remember their dtype in the config echo.
template <class F>
int with_checkpoint(const std::string& path, F&& body) {
  auto bytes = detail::read_file(path);
  auto probe = decode_checkpoint<double>(bytes, path);
  if (probe.config.dtype == "f32") {
    return body(model_from_checkpoint(decode_checkpoint<float>(std::move(bytes), path)));
  }
  return body(model_from_checkpoint(std::move(probe)));
}

void render(const LaneProposals& p, const SceneRecord& s, const RunConfig& cfg) {
  const auto& g = cfg.grid;
  std::vector<int> points(g.cells(), 0);
  const double dx = (g.x_max - g.x_min) / static_cast<double>(g.H_BEV);
  const double dy = (g.y_max - g.y_min) / static_cast<double>(g.W_BEV);
  for (std::size_t i = 0; i < s.cloud.size(); ++i) {
    const double x = s.cloud.x(i), y = s.cloud.y(i);
    if (x < g.x_min || x >= g.x_max || y < g.y_min || y >= g.y_max) continue;
    const auto h = static_cast<std::size_t>((x - g.x_min) / dx);
    const auto w = static_cast<std::size_t>((y - g.y_min) / dy);
    ++points[h * g.W_BEV + w];
  }
  // Far rows on top. Digits: proposal class; '+': missed label; ':' points.
  for (std::size_t hh = g.H_BEV; hh-- > 0;) {
    std::string line(g.W_BEV, ' ');
    for (std::size_t w = 0; w < g.W_BEV; ++w) {
      if (points[hh * g.W_BEV + w]) line[w] = ':';
    }
    for (std::size_t c = 0; c < p.N_cls; ++c) {
      const int lc = s.labels.column[c * p.H + hh];
      if (lc >= 0) line[static_cast<std::size_t>(lc)] = '+';
    }
    for (std::size_t c = 0; c < p.N_cls; ++c) {
      if (auto col = p.at(c, hh)) line[static_cast<std::size_t>(*col)] = static_cast<char>('0' + c % 10);
    }
    std::printf("%3zu |%s|\n", hh, line.c_str());
  }
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Row-wise LiDAR lane detection with two-stage refinement"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path, ckpt_path;
  std::size_t n_scenes = 512, scene_index = 0;
  std::uint64_t seed = 1;
  int tol = 2;
  bool as_json = false, compare_seg = false;
  std::optional<std::size_t> n_lanes;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene dataset");
  synth->add_option("--config", config_path, "Run config JSON (scene block is used)");
  synth->add_option("--out", out_path, "Output dataset file")->required();
  synth->add_option("--n", n_scenes, "Number of scenes");
  synth->add_option("--seed", seed, "Dataset seed");

  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--config", config_path, "Run config JSON");
  trn->add_option("--data", data_path, "Training dataset")->required();
  trn->add_option("--out", out_path, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  ev->add_option("--data", data_path, "Dataset file")->required();
  ev->add_option("--tol", tol, "Column tolerance for a match")->check(CLI::NonNegativeNumber);
  ev->add_flag("--json", as_json, "Print a JSON report");

  auto* inf = app.add_subcommand("infer", "Run one scene and print its proposals");
  inf->add_option("--ckpt", ckpt_path, "Checkpoint file")->required();
  inf->add_option("--data", data_path, "Dataset file holding the scene")->required();
  inf->add_option("--scene", scene_index, "Scene index")->required();
  bool no_render = false;
  inf->add_flag("--no-render", no_render, "Skip the text grid");

  auto* fl = app.add_subcommand("flops", "Analytic forward FLOP count");
  fl->add_option("--config", config_path, "Run config JSON");
  fl->add_flag("--compare-seg-head", compare_seg, "Also count a per-cell segmentation head");
  fl->add_option("--n-lanes", n_lanes, "Gated lanes assumed for refinement (default N_cls)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const RunConfig cfg = config_or_default(config_path);
      const Dataset ds = make_dataset(cfg.scene, n_scenes, seed, out_path);
      std::array<std::size_t, kOcclusionBuckets> hist{};
      for (const auto& s : ds.scenes) ++hist[occlusion_bucket(s.labels.occluded_lane_count)];
      std::printf("wrote %zu scenes to %s\n", ds.scenes.size(), out_path.c_str());
      for (std::size_t b = 0; b < kOcclusionBuckets; ++b) {
        std::printf("  occluded lanes %-4s %zu\n", occlusion_bucket_name(b), hist[b]);
      }
      return 0;
    }
    if (*trn) {
      const RunConfig cfg = config_or_default(config_path);
      return cfg.dtype == "f32" ? run_train<float>(cfg, data_path, out_path)
                                : run_train<double>(cfg, data_path, out_path);
    }
    if (*ev) {
      const Dataset ds = read_dataset(data_path);
      return with_checkpoint(ckpt_path, [&](auto model) {
        const EvalReport report = evaluate(model, ds, tol);
        const FlopReport flops = count_flops(model.config());
        if (as_json) {
          nlohmann::json j = to_json(report);
          j["flops_total"] = flops.total;
          j["flops_by_module"] = flops.by_module;
          j["tol"] = tol;
          std::cout << j.dump(2) << "\n";
        } else {
          const Scores s = report.overall_scores();
          std::printf("scenes %zu  precision %.4f  recall %.4f  f1 %.4f\n", report.total_scenes(),
                      s.precision, s.recall, s.f1);
          for (std::size_t b = 0; b < kOcclusionBuckets; ++b) {
            const Scores sb = report.bucket_scores(b);
            std::printf("  occluded %-4s n=%-4zu f1 %.4f\n", occlusion_bucket_name(b),
                        report.n_scenes[b], sb.f1);
          }
          std::printf("forward flops (all classes gated) %llu\n",
                      static_cast<unsigned long long>(flops.total));
        }
        return 0;
      });
    }
    if (*inf) {
      const Dataset ds = read_dataset(data_path);
      if (scene_index >= ds.scenes.size()) {
        throw ConfigError("scene index " + std::to_string(scene_index) + " out of range (" +
                          std::to_string(ds.scenes.size()) + " scenes)");
      }
      const SceneRecord& scene = ds.scenes[scene_index];
      return with_checkpoint(ckpt_path, [&](auto model) {
        const LaneProposals p = model.infer(scene.cloud);
        std::printf("%zu proposals\n", p.count());
        for (std::size_t c = 0; c < p.N_cls; ++c) {
          for (std::size_t h = 0; h < p.H; ++h) {
            if (auto col = p.at(c, h)) {
              std::printf("  class %zu row %2zu col %2d  p=%.3f\n", c, h, *col,
                          p.probability[c * p.H + h]);
            }
          }
        }
        const Scores s = score(match_and_score(p, scene.labels));
        std::printf("scene f1 %.4f\n", s.f1);
        if (!no_render) render(p, scene, model.config());
        return 0;
      });
    }
    if (*fl) {
      const RunConfig cfg = config_or_default(config_path);
      std::cout << to_json(count_flops(cfg, n_lanes, compare_seg)).dump(2) << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
