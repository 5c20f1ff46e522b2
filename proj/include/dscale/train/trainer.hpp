#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dscale/core/errors.hpp"
#include "dscale/core/rng.hpp"
#include "dscale/data/dataset.hpp"
#include "dscale/models/checkpoint.hpp"
#include "dscale/models/model.hpp"
#include "dscale/train/adamw.hpp"
#include "dscale/train/loss.hpp"
#include "dscale/train/schedule.hpp"

namespace dscale::train {

namespace train_detail {
constexpr std::uint64_t kSampleStream = 0x73616d706c657273ULL;
constexpr std::uint64_t kDropoutStream = 0x64726f706f757421ULL;
}  // namespace train_detail

struct TrainOptions {
  Schedule schedule;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;        // epochs between snapshots; 0 = epochs/10
  std::filesystem::path out_dir;   // empty: nothing written to disk
  std::string tag = "model";
};

struct TrainLog {
  std::vector<double> epoch_mean_loss;
  std::vector<double> lr_used, wd_used;
  double first_step_loss = 0.0;
};

// Seeded single-threaded training loop: batch size 1, fresh shuffle per
// epoch, loss -> backward -> AdamW step. Writes periodic and final
// checkpoints plus a loss-history CSV when out_dir is set.
template <class S>
TrainLog train_model(Model<S>& model, const data::SampleSet& train_set,
                     const TrainOptions& opts) {
  opts.schedule.validate();
  if (train_set.size() == 0) throw DataError("train: empty sample set");
  const auto want_c = static_cast<std::size_t>(model.config.input_channels());
  if (train_set.input[0].extent(0) != want_c)
    throw DataError("train: sample has " + std::to_string(train_set.input[0].extent(0)) +
                    " channels, model expects " + std::to_string(want_c));

  data::EpochSampler sampler(train_set.size(),
                             seed_mix(opts.seed, train_detail::kSampleStream));
  Rng drop_rng(seed_mix(opts.seed, train_detail::kDropoutStream));
  AdamW<S> opt(model.params.all());

  const int ckpt_every =
      opts.checkpoint_every > 0 ? opts.checkpoint_every : std::max(1, opts.schedule.epochs / 10);
  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);

  TrainLog log;
  for (int epoch = 0; epoch < opts.schedule.epochs; ++epoch) {
    const double lr = opts.schedule.lr_at(epoch);
    const double wd = opts.schedule.wd_at(epoch);
    sampler.begin_epoch(epoch);
    double acc = 0.0;
    for (int step = 0; step < opts.schedule.steps_per_epoch; ++step) {
      const std::size_t idx = sampler.next();
      Tape<S> tape(true);
      const Var<S> x = tape.input(train_set.input[idx].template cast<S>());
      const Var<S> y = tape.input(train_set.target[idx].template cast<S>());
      const Var<S> out = model.forward(tape, x, true, drop_rng);
      const Var<S> loss = joint_mse_loss(tape, out, y);
      const double lv = static_cast<double>(tape.val(loss)[0]);
      if (!std::isfinite(lv))
        throw NumericError("loss became non-finite at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(step) + " (lr=" + std::to_string(lr) +
                           ", wd=" + std::to_string(wd) + ")");
      if (epoch == 0 && step == 0) log.first_step_loss = lv;
      model.params.zero_grads();
      tape.backward(loss);
      opt.step(lr, wd);
      acc += lv;
    }
    log.epoch_mean_loss.push_back(acc / opts.schedule.steps_per_epoch);
    log.lr_used.push_back(lr);
    log.wd_used.push_back(wd);
    if (!opts.out_dir.empty() && (epoch + 1) % ckpt_every == 0 &&
        epoch + 1 < opts.schedule.epochs) {
      save_checkpoint(
          model, opts.out_dir / (opts.tag + "_epoch" + std::to_string(epoch + 1) + ".ckpt"));
    }
  }

  if (!opts.out_dir.empty()) {
    save_checkpoint(model, opts.out_dir / (opts.tag + "_final.ckpt"));
    std::ofstream csv(opts.out_dir / (opts.tag + "_loss.csv"), std::ios::trunc);
    if (!csv) throw DataError("cannot write loss history for " + opts.tag);
    csv << "epoch,mean_loss,lr,wd\n";
    char line[128];
    for (std::size_t e = 0; e < log.epoch_mean_loss.size(); ++e) {
      std::snprintf(line, sizeof(line), "%zu,%.12g,%.12g,%.12g\n", e, log.epoch_mean_loss[e],
                    log.lr_used[e], log.wd_used[e]);
      csv << line;
    }
  }
  return log;
}

}  // namespace dscale::train
