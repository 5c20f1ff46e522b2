#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

#include "dscale/core/rng.hpp"
#include "dscale/models/checkpoint.hpp"
#include "dscale/models/model.hpp"
#include "dscale/train/adamw.hpp"
#include "dscale/train/loss.hpp"
#include "dscale/train/schedule.hpp"
#include "dscale/train/trainer.hpp"

using namespace dscale;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& stem) {
    path = fs::temp_directory_path() / (stem + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Decoupled AdamW written out longhand, scalar by scalar, as the check
// against the vectorized optimizer.
struct ScalarAdamRef {
  double m = 0.0, v = 0.0;
  double step(double theta, double g, double lr, double wd, bool decay, int t,
              const train::AdamConfig& c) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    const double mhat = m / (1.0 - std::pow(c.beta1, t));
    const double vhat = v / (1.0 - std::pow(c.beta2, t));
    double out = theta - lr * mhat / (std::sqrt(vhat) + c.eps);
    if (decay) out -= wd * theta;
    return out;
  }
};

// Tiny single-field transformer that builds and trains in milliseconds.
ModelConfig toy_vit() {
  ModelConfig cfg;
  cfg.arch = Arch::single_var;
  cfg.variables = {"tas"};
  cfg.patch = 2;
  cfg.embed_dim = 16;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.head_dim = 8;
  cfg.mlp_hidden = 32;
  cfg.dropout = 0.0;
  cfg.decoder_widths = {8};
  cfg.height = 8;
  cfg.width = 8;
  cfg.seed = 7;
  cfg.validate();
  return cfg;
}

// Eight low-amplitude samples where the target is a fixed smooth function of
// the input, so a few optimizer steps visibly reduce the loss.
data::SampleSet toy_samples(std::uint64_t seed, std::size_t count = 8) {
  data::SampleSet set;
  Rng rng(seed);
  for (std::size_t s = 0; s < count; ++s) {
    Tensor<float> x({1, 8, 8}), y({1, 8, 8});
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double v = 0.4 * rng.uniform(-1.0, 1.0);
      x[i] = static_cast<float>(v);
      y[i] = static_cast<float>(0.5 * v + 0.2 * v * v);
    }
    set.days.emplace_back(1, static_cast<int>(s));
    set.input.push_back(std::move(x));
    set.target.push_back(std::move(y));
  }
  return set;
}

double mean_sq(const Tensor<float>& t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) acc += static_cast<double>(t[i]) * t[i];
  return acc / static_cast<double>(t.numel());
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("adamw matches a longhand scalar reference over ten steps") {
  const train::AdamConfig cfg;
  Parameter<double> w("w", Shape{{4}}, true);
  Parameter<double> b("b", Shape{{3}}, false);
  Rng rng(20240817);
  for (std::size_t i = 0; i < 4; ++i) w.value[i] = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < 3; ++i) b.value[i] = rng.uniform(-1.0, 1.0);

  std::vector<ScalarAdamRef> ref_w(4), ref_b(3);
  std::vector<double> theta_w(4), theta_b(3);
  for (std::size_t i = 0; i < 4; ++i) theta_w[i] = w.value[i];
  for (std::size_t i = 0; i < 3; ++i) theta_b[i] = b.value[i];

  train::AdamW<double> opt({&w, &b}, cfg);
  for (int t = 1; t <= 10; ++t) {
    const double lr = 1e-2 / (1.0 + 0.1 * t);
    const double wd = 1e-3;
    for (std::size_t i = 0; i < 4; ++i) w.grad[i] = rng.normal();
    for (std::size_t i = 0; i < 3; ++i) b.grad[i] = rng.normal();
    for (std::size_t i = 0; i < 4; ++i)
      theta_w[i] = ref_w[i].step(theta_w[i], w.grad[i], lr, wd, true, t, cfg);
    for (std::size_t i = 0; i < 3; ++i)
      theta_b[i] = ref_b[i].step(theta_b[i], b.grad[i], lr, wd, false, t, cfg);
    opt.step(lr, wd);
  }
  CHECK(opt.steps() == 10);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(w.value[i] - theta_w[i]) < 1e-12);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(b.value[i] - theta_b[i]) < 1e-12);
}

TEST_CASE("zero-gradient steps contract decaying parameters by exactly 1-wd") {
  Parameter<double> w("w", Shape{{3}}, true);
  Parameter<double> b("b", Shape{{2}}, false);
  w.value[0] = 0.3;
  w.value[1] = -1.7;
  w.value[2] = 1e6;
  b.value[0] = 0.9;
  b.value[1] = -0.4;
  const Tensor<double> w0 = w.value;
  const Tensor<double> b0 = b.value;

  const double wd = 0.02;
  train::AdamW<double> opt({&w, &b});
  opt.step(0.1, wd);
  for (std::size_t i = 0; i < 3; ++i) CHECK(w.value[i] == (1.0 - wd) * w0[i]);
  for (std::size_t i = 0; i < 2; ++i) CHECK(b.value[i] == b0[i]);
  opt.step(0.1, wd);
  for (std::size_t i = 0; i < 3; ++i) CHECK(w.value[i] == (1.0 - wd) * ((1.0 - wd) * w0[i]));
}

TEST_CASE("adamw single step on theta=1, g=2 lands on 0.9") {
  train::AdamConfig cfg;
  cfg.eps = 0.0;
  Parameter<double> w("w", Shape{{1}}, true);
  w.value[0] = 1.0;
  w.grad[0] = 2.0;
  train::AdamW<double> opt({&w}, cfg);
  opt.step(0.1, 0.0);
  CHECK(w.value[0] == doctest::Approx(0.9).epsilon(1e-14));
}

TEST_CASE("adamw rejects bad learning rate and decay") {
  Parameter<float> w("w", Shape{{1}}, true);
  train::AdamW<float> opt({&w});
  CHECK_THROWS_AS(opt.step(0.0, 0.0), ConfigError);
  CHECK_THROWS_AS(opt.step(-1e-3, 0.0), ConfigError);
  CHECK_THROWS_AS(opt.step(1e-3, -0.1), ConfigError);
}

TEST_CASE("schedule drops the rate for the final quarter") {
  train::Schedule s;
  CHECK(s.epochs == 400);
  CHECK(s.steps_per_epoch == 500);
  CHECK(s.phase_boundary() == 300);
  CHECK(s.lr_at(0) == 1e-4);
  CHECK(s.lr_at(299) == 1e-4);
  CHECK(s.lr_at(300) == 1e-5);
  CHECK(s.lr_at(399) == 1e-5);
  CHECK(s.wd_at(0) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(s.wd_at(399) == doctest::Approx(1e-6).epsilon(1e-12));
  CHECK_THROWS_AS(s.lr_at(-1), ConfigError);
  CHECK_THROWS_AS(s.lr_at(400), ConfigError);

  train::Schedule toy{20, 100, 1e-3};
  CHECK(toy.phase_boundary() == 15);
  CHECK(toy.lr_at(14) == 1e-3);
  CHECK(toy.lr_at(15) == 1e-4);

  train::Schedule bad{0, 100, 1e-3};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {10, 100, 0.0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  nlohmann::json j = toy;
  const auto back = j.get<train::Schedule>();
  CHECK(back.epochs == 20);
  CHECK(back.base_lr == 1e-3);
}

TEST_CASE("mse loss matches hand-computed values") {
  Tape<double> t;
  Tensor<double> a({2, 2});
  Tensor<double> b({2, 2});
  a.fill(0.5);
  b.fill(0.5);
  CHECK(t.val(train::mse_loss(t, t.input(a), t.input(b)))[0] == 0.0);

  b.fill(0.8);  // constant offset d -> d^2
  CHECK(t.val(train::mse_loss(t, t.input(a), t.input(b)))[0] ==
        doctest::Approx(0.09).epsilon(1e-12));

  Tensor<double> p(Shape{{1, 2}}, std::vector<double>{0.0, 1.0});
  Tensor<double> q(Shape{{1, 2}}, std::vector<double>{1.0, 1.0});
  CHECK(t.val(train::mse_loss(t, t.input(p), t.input(q)))[0] == doctest::Approx(0.5));

  Tensor<double> cube({1, 2, 2});
  CHECK_THROWS_AS(train::mse_loss(t, t.input(cube), t.input(cube)), DimensionError);
  CHECK_THROWS_AS(train::joint_mse_loss(t, t.input(a), t.input(b)), DimensionError);
}

TEST_CASE("joint loss equals the mean of per-variable losses") {
  Rng rng(91);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t c = 2 + rng.below(4);
    const std::size_t h = 3 + rng.below(4);
    const std::size_t w = 3 + rng.below(4);
    Tensor<double> pred({c, h, w});
    Tensor<double> tgt({c, h, w});
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      pred[i] = rng.normal();
      tgt[i] = rng.normal();
    }
    Tape<double> t;
    const double joint = t.val(train::joint_mse_loss(t, t.input(pred), t.input(tgt)))[0];
    double acc = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      Tensor<double> ps({h, w});
      Tensor<double> ts({h, w});
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
          ps.at(i, j) = pred.at(ch, i, j);
          ts.at(i, j) = tgt.at(ch, i, j);
        }
      acc += t.val(train::mse_loss(t, t.input(ps), t.input(ts)))[0];
    }
    CHECK(std::abs(joint - acc / static_cast<double>(c)) < 1e-12);
  }

  // Constructed: per-channel losses 0.2 and 0.4 average to 0.3.
  Tensor<double> pred({2, 1, 2});
  Tensor<double> tgt({2, 1, 2});
  pred.at(0, 0, 0) = std::sqrt(0.2);
  pred.at(0, 0, 1) = -std::sqrt(0.2);
  pred.at(1, 0, 0) = std::sqrt(0.4);
  pred.at(1, 0, 1) = -std::sqrt(0.4);
  Tape<double> t;
  CHECK(t.val(train::joint_mse_loss(t, t.input(pred), t.input(tgt)))[0] ==
        doctest::Approx(0.3).epsilon(1e-14));

  // Reordering channels the same way on both sides leaves the value alone.
  Tensor<double> swapped_p({2, 1, 2});
  Tensor<double> swapped_t({2, 1, 2});
  for (std::size_t j = 0; j < 2; ++j) {
    swapped_p.at(0, 0, j) = pred.at(1, 0, j);
    swapped_p.at(1, 0, j) = pred.at(0, 0, j);
  }
  const double a = t.val(train::joint_mse_loss(t, t.input(pred), t.input(tgt)))[0];
  const double b = t.val(train::joint_mse_loss(t, t.input(swapped_p), t.input(swapped_t)))[0];
  CHECK(a == doctest::Approx(b).epsilon(1e-13));
}

TEST_CASE("training reduces the loss and reruns bitwise-identically") {
  const ModelConfig cfg = toy_vit();
  const data::SampleSet set = toy_samples(404);

  train::TrainOptions opts;
  opts.schedule = {4, 8, 3e-3};
  opts.seed = 11;
  opts.checkpoint_every = 2;
  opts.tag = "toy";

  TempDir run_a("dscale_train_a");
  opts.out_dir = run_a.path;
  Model<float> model = build_model<float>(cfg);
  const train::TrainLog log = train::train_model(model, set, opts);

  // Zero head: the first step scores the untouched target.
  data::EpochSampler probe(set.size(), seed_mix(opts.seed, train::train_detail::kSampleStream));
  probe.begin_epoch(0);
  const double expect_first = mean_sq(set.target[probe.next()]);
  CHECK(log.first_step_loss == doctest::Approx(expect_first).epsilon(1e-6));

  REQUIRE(log.epoch_mean_loss.size() == 4);
  CHECK(log.epoch_mean_loss.back() < log.epoch_mean_loss.front());
  CHECK(log.lr_used[0] == 3e-3);
  CHECK(log.lr_used[3] == doctest::Approx(3e-4));
  CHECK(log.wd_used[0] == doctest::Approx(3e-4));

  CHECK(fs::exists(run_a.path / "toy_epoch2.ckpt"));
  CHECK(!fs::exists(run_a.path / "toy_epoch4.ckpt"));  // final epoch -> toy_final.ckpt
  REQUIRE(fs::exists(run_a.path / "toy_final.ckpt"));
  REQUIRE(fs::exists(run_a.path / "toy_loss.csv"));

  const std::string csv = slurp(run_a.path / "toy_loss.csv");
  CHECK(csv.rfind("epoch,mean_loss,lr,wd\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  // Fresh model, fresh directory, same seeds: identical bytes out.
  TempDir run_b("dscale_train_b");
  opts.out_dir = run_b.path;
  Model<float> again = build_model<float>(cfg);
  const train::TrainLog log2 = train::train_model(again, set, opts);
  CHECK(log2.first_step_loss == log.first_step_loss);
  CHECK(slurp(run_b.path / "toy_final.ckpt") == slurp(run_a.path / "toy_final.ckpt"));
  CHECK(slurp(run_b.path / "toy_loss.csv") == csv);

  // The checkpoint restores the trained weights.
  Model<float> restored = load_checkpoint<float>(run_a.path / "toy_final.ckpt");
  const Tensor<float> got = restored.forward_eval(set.input[0]);
  const Tensor<float> want = model.forward_eval(set.input[0]);
  REQUIRE(got.same_shape(want));
  for (std::size_t i = 0; i < got.numel(); ++i) CHECK(got[i] == want[i]);
}

TEST_CASE("trainer guards inputs and flags divergence") {
  const ModelConfig cfg = toy_vit();
  Model<float> model = build_model<float>(cfg);
  train::TrainOptions opts;
  opts.schedule = {1, 4, 1e-3};

  data::SampleSet empty;
  CHECK_THROWS_AS(train::train_model(model, empty, opts), DataError);

  data::SampleSet wide = toy_samples(5);
  for (auto& x : wide.input) x = Tensor<float>({2, 8, 8});
  for (auto& y : wide.target) y = Tensor<float>({2, 8, 8});
  CHECK_THROWS_AS(train::train_model(model, wide, opts), DataError);

  // An absurd rate sends the parameters to infinity within a few steps.
  data::SampleSet set = toy_samples(6);
  opts.schedule = {1, 8, 1e12};
  Model<float> doomed = build_model<float>(cfg);
  CHECK_THROWS_AS(train::train_model(doomed, set, opts), NumericError);
}

TEST_CASE("trainer runs the residual u-net in double precision") {
  ModelConfig cfg;
  cfg.arch = Arch::unet;
  cfg.variables = {"a", "b"};
  cfg.unet_widths = {8, 16};
  cfg.height = 8;
  cfg.width = 8;
  cfg.seed = 3;
  cfg.validate();

  data::SampleSet set;
  Rng rng(55);
  for (int s = 0; s < 4; ++s) {
    Tensor<float> x({2, 8, 8}), y({2, 8, 8});
    for (std::size_t i = 0; i < x.numel(); ++i) {
      x[i] = static_cast<float>(0.3 * rng.normal());
      y[i] = 0.5f * x[i];
    }
    set.days.emplace_back(1, s);
    set.input.push_back(std::move(x));
    set.target.push_back(std::move(y));
  }

  Model<double> model = build_model<double>(cfg);
  train::TrainOptions opts;
  opts.schedule = {2, 4, 1e-3};
  opts.seed = 9;
  const train::TrainLog log = train::train_model(model, set, opts);
  REQUIRE(log.epoch_mean_loss.size() == 2);
  CHECK(std::isfinite(log.epoch_mean_loss[1]));
  CHECK(log.epoch_mean_loss[1] < log.epoch_mean_loss[0]);
}

}  // TEST_SUITE
