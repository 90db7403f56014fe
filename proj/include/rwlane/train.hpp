#ifndef RWLANE_TRAIN_HPP
#define RWLANE_TRAIN_HPP

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rwlane/adam.hpp"
#include "rwlane/checkpoint.hpp"
#include "rwlane/dataset.hpp"
#include "rwlane/losses.hpp"
#include "rwlane/model.hpp"

namespace rwlane {

struct EpochLog {
  std::size_t epoch = 0;
  LossReport mean;
  double seconds = 0.0;
};

struct TrainOptions {
  /// Directory for `checkpoint.rwln` (overwritten each epoch) and
  /// `loss_log.json`. Empty: nothing is written.
  std::string out_dir;
  std::function<void(const EpochLog&)> on_epoch;
};

template <class T>
struct TrainResult {
  std::vector<EpochLog> log;
  Checkpoint<T> checkpoint;
};

inline nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"l_ext_s1", e.mean.l_ext_s1},
          {"l_loc_s1", e.mean.l_loc_s1},
          {"l_ext_s2", e.mean.l_ext_s2},
          {"l_loc_s2", e.mean.l_loc_s2},
          {"l_total", e.mean.l_total},
          {"seconds", e.seconds}};
}

/// Order in which scenes are visited in `epoch` (seeded Fisher-Yates).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed) ^ mix_seed(0xE90C0000ULL + epoch));
  rng.shuffle(std::span<std::size_t>(order));
  return order;
}

/// Single-threaded training. Each batch processes its scenes one after the
/// other, accumulating gradients, averages them and applies one Adam step.
/// With `two_stage` off only stage-1 terms enter the loss and the refinement
/// and stage-2 parameters never receive gradients.
template <class T>
TrainResult<T> train(LaneNet<T>& model, AdamState& adam, const Dataset& data,
                     const TrainOptions& opt = {}, std::size_t start_epoch = 0) {
  const RunConfig& cfg = model.config();
  cfg.validate();
  if (data.scenes.empty()) throw ConfigError("train: dataset is empty");
  if (data.N_cls != cfg.head.N_cls || data.H != cfg.grid.H_BEV || data.W != cfg.grid.W_BEV ||
      data.extra_channels != cfg.grid.extra_channels) {
    throw ConfigError("train: dataset dims disagree with config");
  }
  adam.lr = cfg.lr;
  if (!opt.out_dir.empty()) std::filesystem::create_directories(opt.out_dir);

  TrainResult<T> result;
  auto& params = model.params();
  std::size_t batch_index = 0;
  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(data.scenes.size(), cfg.seed, epoch);
    LossReport sum;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      params.clear_grads();
      for (std::size_t k = start; k < end; ++k) {
        const SceneRecord& scene = data.scenes[order[k]];
        Tape<T> tape;
        auto fwd = model.forward(tape, scene.cloud);
        auto loss = model.loss(fwd, scene.labels);
        if (!std::isfinite(loss.report.l_total)) {
          throw NumericError("train: non-finite loss in batch " + std::to_string(batch_index) +
                             " (epoch " + std::to_string(epoch + 1) + ")");
        }
        tape.backward(loss.total);
        sum.l_ext_s1 += loss.report.l_ext_s1;
        sum.l_loc_s1 += loss.report.l_loc_s1;
        sum.l_ext_s2 += loss.report.l_ext_s2;
        sum.l_loc_s2 += loss.report.l_loc_s2;
        sum.l_total += loss.report.l_total;
      }
      const T inv = T{1} / static_cast<T>(end - start);
      for (const auto& name : params.names()) {
        for (T& g : params.at(name).grad) g *= inv;
      }
      adam_step(params, adam);
    }
    const double n = static_cast<double>(order.size());
    EpochLog log;
    log.epoch = epoch + 1;
    log.mean = {sum.l_ext_s1 / n, sum.l_loc_s1 / n, sum.l_ext_s2 / n, sum.l_loc_s2 / n,
                sum.l_total / n};
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);
    if (opt.on_epoch) opt.on_epoch(log);

    if (!opt.out_dir.empty()) {
      Checkpoint<T> ck{cfg, epoch + 1, params, adam};
      save_checkpoint(opt.out_dir + "/checkpoint.rwln", ck);
      nlohmann::json j = nlohmann::json::array();
      for (const auto& e : result.log) j.push_back(to_json(e));
      std::ofstream(opt.out_dir + "/loss_log.json") << j.dump(2) << "\n";
    }
  }
  params.clear_grads();
  result.checkpoint = Checkpoint<T>{cfg, cfg.epochs, params, adam};
  return result;
}

}  // namespace rwlane

#endif  // RWLANE_TRAIN_HPP
