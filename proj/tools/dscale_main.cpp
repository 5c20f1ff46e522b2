// Command-line front end: generate / train / evaluate / benchmark.
//
// Exit codes: 0 success, 1 unexpected error, 2 configuration error,
// 3 data error, 4 numeric error.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dscale/cli/pipeline.hpp"

namespace {

using namespace dscale;

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

bool parse_extent(const std::string& s, int& h, int& w) {
  char sep = 0;
  return std::sscanf(s.c_str(), "%d%c%d", &h, &sep, &w) == 3 && (sep == 'x' || sep == 'X');
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"paired-field downscaling: dataset generation, training, "
               "evaluation and benchmarking"};
  app.require_subcommand(1);

  // generate ----------------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "write a synthetic paired dataset");
  cli::GenerateOptions gopt;
  std::string gen_out, hi_extent;
  gen->add_option("--out", gen_out, "dataset directory")->required();
  gen->add_option("--seed", gopt.synth.seed, "generator seed");
  gen->add_option("--years", gopt.synth.years, "number of years");
  gen->add_option("--first-year", gopt.synth.first_year, "first year label");
  gen->add_option("--days", gopt.synth.days_per_year, "days per year");
  gen->add_option("--hi", hi_extent, "high-res extent as HxW (default 64x64)");
  gen->add_option("--scale", gopt.synth.scale, "downscaling factor hi -> lo");
  gen->add_flag("--force", gopt.force, "overwrite an existing dataset");

  // train -------------------------------------------------------------------
  auto* tr = app.add_subcommand("train", "train one architecture on the train split");
  std::string tr_config, tr_data, tr_out, tr_arch;
  std::vector<std::string> tr_vars;
  std::vector<std::uint64_t> tr_seeds;
  std::vector<int> tr_dec_widths, tr_unet_widths;
  int tr_epochs = 0, tr_steps = 0, tr_patch = 0, tr_embed = 0, tr_depth = 0, tr_heads = 0;
  int tr_mlp = 0;
  double tr_lr = 0.0, tr_dropout = 0.0;
  bool tr_force = false;
  tr->add_option("--config", tr_config, "JSON run config; flags override its fields");
  tr->add_option("--data", tr_data, "dataset directory");
  tr->add_option("--out", tr_out, "output directory for checkpoints");
  tr->add_option("--arch", tr_arch, "single_var | 1e1d | 1emd | unet");
  tr->add_option("--variables", tr_vars, "variables to train on (default: all in dataset)");
  tr->add_option("--seeds", tr_seeds, "training seeds, one run per seed (default: 0)");
  tr->add_option("--epochs", tr_epochs, "epochs");
  tr->add_option("--steps", tr_steps, "steps per epoch");
  tr->add_option("--lr", tr_lr, "base learning rate");
  tr->add_option("--patch", tr_patch, "patch size");
  tr->add_option("--embed-dim", tr_embed, "token width");
  tr->add_option("--depth", tr_depth, "encoder blocks");
  tr->add_option("--heads", tr_heads, "attention heads");
  tr->add_option("--mlp-hidden", tr_mlp, "feed-forward hidden width");
  tr->add_option("--dropout", tr_dropout, "dropout probability");
  tr->add_option("--decoder-widths", tr_dec_widths, "upsampling decoder channel widths")
      ->delimiter(',');
  tr->add_option("--unet-widths", tr_unet_widths, "encoder stage widths plus bottleneck")
      ->delimiter(',');
  tr->add_flag("--force", tr_force, "retrain over existing checkpoints");

  // evaluate ----------------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "score checkpoints on the test split");
  cli::EvaluateOptions eopt;
  std::string ev_data, ev_report;
  std::vector<std::string> ev_ckpts;
  ev->add_option("checkpoints", ev_ckpts, "checkpoint files")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--report-dir", ev_report, "output directory for the report")->required();
  ev->add_flag("--ssim-global", eopt.ssim_global, "whole-field statistics instead of windows");

  // benchmark ---------------------------------------------------------------
  auto* bm = app.add_subcommand("benchmark", "time test-split inference per model");
  cli::BenchmarkOptions bopt;
  std::string bm_data, bm_out;
  std::vector<std::string> bm_ckpts;
  bm->add_option("checkpoints", bm_ckpts, "checkpoint files")->required();
  bm->add_option("--data", bm_data, "dataset directory")->required();
  bm->add_option("--out", bm_out, "CSV output path");
  bm->add_option("--repeat", bopt.repeat, "timing passes, median reported");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (gen->parsed()) {
    return run_guarded([&] {
      if (!hi_extent.empty() && !parse_extent(hi_extent, gopt.synth.hi_h, gopt.synth.hi_w))
        throw ConfigError("generate: --hi expects HxW, got '" + hi_extent + "'");
      gopt.out = gen_out;
      cli::run_generate(gopt, std::cout);
    });
  }

  if (tr->parsed()) {
    return run_guarded([&] {
      cli::RunConfig cfg;
      if (!tr_config.empty()) cfg = cli::RunConfig::load(tr_config);
      if (!tr_data.empty()) cfg.data_dir = tr_data;
      if (!tr_out.empty()) cfg.out_dir = tr_out;
      if (!tr_arch.empty()) cfg.model.arch = arch_from_string(tr_arch);
      if (!tr_vars.empty()) cfg.model.variables = tr_vars;
      if (!tr_seeds.empty()) cfg.seeds = tr_seeds;
      if (tr->count("--epochs")) cfg.schedule.epochs = tr_epochs;
      if (tr->count("--steps")) cfg.schedule.steps_per_epoch = tr_steps;
      if (tr->count("--lr")) cfg.schedule.base_lr = tr_lr;
      if (tr->count("--patch")) cfg.model.patch = tr_patch;
      if (tr->count("--embed-dim")) cfg.model.embed_dim = tr_embed;
      if (tr->count("--depth")) cfg.model.depth = tr_depth;
      if (tr->count("--heads")) cfg.model.heads = tr_heads;
      if (tr->count("--mlp-hidden")) cfg.model.mlp_hidden = tr_mlp;
      if (tr->count("--dropout")) cfg.model.dropout = tr_dropout;
      if (!tr_dec_widths.empty()) cfg.model.decoder_widths = tr_dec_widths;
      if (!tr_unet_widths.empty()) cfg.model.unet_widths = tr_unet_widths;
      for (std::uint64_t seed : cfg.seeds) cli::run_train(cfg, seed, tr_force, std::cout);
    });
  }

  if (ev->parsed()) {
    return run_guarded([&] {
      eopt.data_dir = ev_data;
      eopt.report_dir = ev_report;
      eopt.checkpoints.assign(ev_ckpts.begin(), ev_ckpts.end());
      cli::run_evaluate(eopt, std::cout);
    });
  }

  return run_guarded([&] {
    bopt.data_dir = bm_data;
    bopt.out_csv = bm_out;
    bopt.checkpoints.assign(bm_ckpts.begin(), bm_ckpts.end());
    cli::run_benchmark(bopt, std::cout);
  });
}
