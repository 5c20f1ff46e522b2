#pragma once

#include "dscale/models/model.hpp"
#include "support/gradcheck.hpp"
#include "support/testcfg.hpp"

// Gradient-check scenarios for composite layers and whole micro models.
// Parameters are the layers' own weights; inputs enter as constants.
namespace gradtest {

inline std::vector<GradCase> layer_grad_cases() {
  namespace ly = dscale::layers;
  using dscale::ops::Act;
  std::vector<GradCase> cases;

  // Layers register their parameters in a ParamStore; to gradcheck them we
  // keep the store plus the built layer alive inside the case closure.
  cases.push_back({"attention", [](std::uint64_t seed) {
    Rng rng(seed);
    auto ps = std::make_shared<ly::ParamStore<double>>();
    auto attn = std::make_shared<ly::Attention<double>>(
        ly::Attention<double>::make(*ps, "attn", 8, 2, 4, 0.25, rng));
    auto x = std::make_shared<Tensor<double>>(random_tensor({3, 8}, rng));
    auto r = std::make_shared<Tensor<double>>(random_tensor({3, 8}, rng));
    const std::uint64_t drop_seed = rng.next_u64();
    return check_gradients(ps->all(), [=](Tape<double>& t, const std::vector<Var<double>>&) {
      Rng drop(drop_seed);
      return project(t, forward(t, *attn, t.input(*x), true, drop), *r);
    });
  }});

  cases.push_back({"transformer_block", [](std::uint64_t seed) {
    Rng rng(seed);
    auto ps = std::make_shared<ly::ParamStore<double>>();
    auto blk = std::make_shared<ly::TransformerBlock<double>>(
        ly::TransformerBlock<double>::make(*ps, "blk", 8, 2, 4, 12, 0.2, rng));
    auto x = std::make_shared<Tensor<double>>(random_tensor({4, 8}, rng));
    auto r = std::make_shared<Tensor<double>>(random_tensor({4, 8}, rng));
    const std::uint64_t drop_seed = rng.next_u64();
    return check_gradients(ps->all(), [=](Tape<double>& t, const std::vector<Var<double>>&) {
      Rng drop(drop_seed);
      return project(t, forward(t, *blk, t.input(*x), true, drop), *r);
    });
  }});

  cases.push_back({"res_block", [](std::uint64_t seed) {
    Rng rng(seed);
    auto ps = std::make_shared<ly::ParamStore<double>>();
    auto blk = std::make_shared<ly::ResBlock<double>>(
        ly::ResBlock<double>::make(*ps, "res", 8, 16, rng));
    auto x = std::make_shared<Tensor<double>>(random_tensor({8, 3, 3}, rng));
    auto r = std::make_shared<Tensor<double>>(random_tensor({16, 3, 3}, rng));
    return check_gradients(ps->all(), [=](Tape<double>& t, const std::vector<Var<double>>&) {
      return project(t, forward(t, *blk, t.input(*x)), *r);
    });
  }});

  cases.push_back({"decoder_stage", [](std::uint64_t seed) {
    Rng rng(seed);
    auto ps = std::make_shared<ly::ParamStore<double>>();
    auto st = std::make_shared<ly::DecoderStage<double>>(
        ly::DecoderStage<double>::make(*ps, "st", 8, 8, true, rng));
    auto x = std::make_shared<Tensor<double>>(random_tensor({8, 2, 2}, rng));
    auto r = std::make_shared<Tensor<double>>(random_tensor({8, 4, 4}, rng));
    return check_gradients(ps->all(), [=](Tape<double>& t, const std::vector<Var<double>>&) {
      return project(t, forward(t, *st, t.input(*x)), *r);
    });
  }});

  return cases;
}

/// End-to-end gradient checks: micro model, squared-error loss, every weight.
inline std::vector<GradCase> model_grad_cases() {
  std::vector<GradCase> cases;
  for (const auto arch : {dscale::Arch::single_var, dscale::Arch::vit_1e1d,
                          dscale::Arch::vit_1emd, dscale::Arch::unet}) {
    cases.push_back({"model_" + to_string(arch), [arch](std::uint64_t seed) {
      dscale::ModelConfig cfg = testcfg::micro(arch);
      cfg.seed = seed;
      auto m = std::make_shared<dscale::Model<double>>(dscale::build_model<double>(cfg));
      // the output head starts at zero; nudge it so its gradient path is live
      Rng rng(dscale::seed_mix(seed, 99));
      for (dscale::Parameter<double>* p : m->params.all()) {
        for (std::size_t i = 0; i < p->numel(); ++i) {
          p->value[i] += 0.05 * rng.uniform(-1.0, 1.0);
        }
      }
      const std::size_t ch = static_cast<std::size_t>(cfg.input_channels());
      auto x = std::make_shared<Tensor<double>>(
          random_tensor({ch, static_cast<std::size_t>(cfg.height),
                         static_cast<std::size_t>(cfg.width)}, rng));
      auto y = std::make_shared<Tensor<double>>(
          random_tensor({ch, static_cast<std::size_t>(cfg.height),
                         static_cast<std::size_t>(cfg.width)}, rng));
      const std::uint64_t drop_seed = rng.next_u64();
      return check_gradients(m->params.all(),
                             [=](Tape<double>& t, const std::vector<Var<double>>&) {
                               Rng drop(drop_seed);
                               auto out = m->forward(t, t.input(*x), true, drop);
                               return dscale::ops::mean_sq_err(t, out, t.input(*y));
                             });
    }});
  }
  return cases;
}

}  // namespace gradtest
