#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dscale/core/errors.hpp"
#include "dscale/data/dataset.hpp"
#include "dscale/eval/metrics.hpp"
#include "dscale/eval/report.hpp"
#include "dscale/models/checkpoint.hpp"
#include "dscale/models/model.hpp"
#include "dscale/train/trainer.hpp"
#include "json.hpp"

namespace dscale::cli {

/// Run settings shared by the train pipeline. `model.variables`, `height` and
/// `width` may be left at their defaults here; training resolves them from the
/// dataset manifest before the config is validated.
struct RunConfig {
  ModelConfig model;
  train::Schedule schedule;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::vector<std::uint64_t> seeds{0};
  bool ssim_global = false;

  nlohmann::json to_json() const {
    return nlohmann::json{{"model", model.to_json()},
                          {"schedule", schedule},
                          {"data_dir", data_dir.string()},
                          {"out_dir", out_dir.string()},
                          {"seeds", seeds},
                          {"ssim_global", ssim_global}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    try {
      if (j.contains("model")) {
        const auto& m = j.at("model");
        if (m.contains("arch")) c.model.arch = arch_from_string(m.at("arch").get<std::string>());
        c.model.variables = m.value("variables", c.model.variables);
        c.model.patch = m.value("patch", c.model.patch);
        c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
        c.model.depth = m.value("depth", c.model.depth);
        c.model.heads = m.value("heads", c.model.heads);
        c.model.head_dim = m.value("head_dim", c.model.head_dim);
        c.model.mlp_hidden = m.value("mlp_hidden", c.model.mlp_hidden);
        c.model.dropout = m.value("dropout", c.model.dropout);
        c.model.decoder_widths = m.value("decoder_widths", c.model.decoder_widths);
        c.model.unet_widths = m.value("unet_widths", c.model.unet_widths);
      }
      if (j.contains("schedule")) j.at("schedule").get_to(c.schedule);
      c.data_dir = j.value("data_dir", std::string{});
      c.out_dir = j.value("out_dir", std::string{});
      c.seeds = j.value("seeds", c.seeds);
      c.ssim_global = j.value("ssim_global", c.ssim_global);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    if (c.seeds.empty()) throw ConfigError("config: seeds must be non-empty");
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed config " + path.string() + ": " + e.what());
    }
  }
};

/// Writes the fully resolved settings of a command next to its outputs so a
/// run can be reproduced from its artifacts alone.
inline void write_config_echo(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

namespace cli_detail {

inline std::string join(const std::vector<std::string>& parts, const char* sep = " ") {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += sep;
    s += parts[i];
  }
  return s;
}

inline std::string join_years(const std::vector<int>& years) {
  std::vector<std::string> s;
  s.reserve(years.size());
  for (int y : years) s.push_back(std::to_string(y));
  return join(s);
}

}  // namespace cli_detail

// ---------------------------------------------------------------------------
// generate

struct GenerateOptions {
  data::SynthConfig synth;
  std::filesystem::path out;
  bool force = false;
};

/// Creates a paired dataset under `opt.out`. Refuses to overwrite an existing
/// dataset unless `force` is set.
inline data::GenerateResult run_generate(const GenerateOptions& opt, std::ostream& log) {
  if (opt.out.empty()) throw ConfigError("generate: output directory required");
  const auto manifest_path = opt.out / "manifest.json";
  if (std::filesystem::exists(manifest_path) && !opt.force)
    throw ConfigError("generate: " + manifest_path.string() +
                      " already exists (re-run with --force to overwrite)");

  auto res = data::generate_dataset(opt.synth, opt.out);
  const auto& m = res.manifest;
  const auto split = data::split_by_decade(m.years);

  log << "wrote " << m.files.size() << " field files for " << m.variables.size()
      << " variables, " << m.years.size() << " years x " << m.days_per_year << " days\n";
  log << "grid: hi " << m.grid.hi_h << "x" << m.grid.hi_w << " (padded to " << m.grid.padded_h()
      << "x" << m.grid.padded_w() << "), lo " << m.grid.lo_h << "x" << m.grid.lo_w << "\n";
  log << "split: " << split.train.size() << " train years, test years "
      << cli_detail::join_years(split.test) << "\n";

  write_config_echo(opt.out / "generate_config.json",
                    {{"synth", opt.synth}, {"out", opt.out.string()}});
  return res;
}

// ---------------------------------------------------------------------------
// train

struct TrainedModel {
  std::string tag;
  std::filesystem::path checkpoint;
  double first_step_loss = 0.0;
  double first_epoch_loss = 0.0;
  double final_epoch_loss = 0.0;
};

namespace cli_detail {

inline std::vector<std::string> resolve_variables(const std::vector<std::string>& wanted,
                                                  const data::Manifest& m) {
  if (wanted.empty()) return m.variables;
  for (const auto& v : wanted)
    if (std::find(m.variables.begin(), m.variables.end(), v) == m.variables.end())
      throw ConfigError("train: variable '" + v + "' not in dataset");
  return wanted;
}

inline std::size_t variable_index(const data::Manifest& m, const std::string& var) {
  const auto it = std::find(m.variables.begin(), m.variables.end(), var);
  if (it == m.variables.end()) throw ConfigError("variable '" + var + "' not in dataset");
  return static_cast<std::size_t>(it - m.variables.begin());
}

}  // namespace cli_detail

/// Trains the configured architecture on the train-year split and writes
/// checkpoints under `<out_dir>/seed<seed>/`. The single-variable architecture
/// trains one model per variable; all others train one joint model.
inline std::vector<TrainedModel> run_train(const RunConfig& cfg, std::uint64_t seed, bool force,
                                           std::ostream& log) {
  if (cfg.data_dir.empty()) throw ConfigError("train: data directory required");
  if (cfg.out_dir.empty()) throw ConfigError("train: output directory required");
  cfg.schedule.validate();

  const auto manifest = data::Manifest::load(cfg.data_dir / "manifest.json");
  const auto stats = data::NormStats::load(cfg.data_dir / "norm_stats.json");
  const auto split = data::split_by_decade(manifest.years);
  const auto vars = cli_detail::resolve_variables(cfg.model.variables, manifest);

  ModelConfig base = cfg.model;
  base.height = manifest.grid.padded_h();
  base.width = manifest.grid.padded_w();
  base.seed = seed;

  struct Job {
    std::string tag;
    ModelConfig config;
    std::size_t var_index;
  };
  std::vector<Job> jobs;
  if (base.arch == Arch::single_var) {
    for (const auto& v : vars) {
      ModelConfig mc = base;
      mc.variables = {v};
      mc.validate();
      jobs.push_back({"single_var_" + v, mc, cli_detail::variable_index(manifest, v)});
    }
  } else {
    if (vars != manifest.variables)
      throw ConfigError("train: multi-variable architectures train on the full dataset "
                        "variable set (" +
                        cli_detail::join(manifest.variables, ", ") + ")");
    ModelConfig mc = base;
    mc.variables = vars;
    mc.validate();
    jobs.push_back({to_string(base.arch), mc, 0});
  }

  const std::filesystem::path seed_dir = cfg.out_dir / ("seed" + std::to_string(seed));
  for (const auto& job : jobs) {
    const auto final_path = seed_dir / (job.tag + "_final.ckpt");
    if (std::filesystem::exists(final_path) && !force)
      throw ConfigError("train: " + final_path.string() +
                        " already exists (re-run with --force to retrain)");
  }
  std::filesystem::create_directories(seed_dir);

  const auto all = data::load_samples(cfg.data_dir, manifest, stats, split.train);
  log << "train split: " << all.size() << " days, " << manifest.variables.size()
      << " variables on a " << manifest.grid.padded_h() << "x" << manifest.grid.padded_w()
      << " padded grid\n";

  std::vector<TrainedModel> out;
  for (const auto& job : jobs) {
    const auto& set = job.config.arch == Arch::single_var
                          ? data::select_variable(all, job.var_index, manifest.variables.size())
                          : all;
    auto model = build_model<float>(job.config);
    log << job.tag << ": " << model.param_total() << " parameters, " << cfg.schedule.epochs
        << " epochs x " << cfg.schedule.steps_per_epoch << " steps (seed " << seed << ")\n";

    train::TrainOptions topt;
    topt.schedule = cfg.schedule;
    topt.seed = seed;
    topt.out_dir = seed_dir;
    topt.tag = job.tag;
    const auto hist = train::train_model(model, set, topt);

    TrainedModel tm;
    tm.tag = job.tag;
    tm.checkpoint = seed_dir / (job.tag + "_final.ckpt");
    tm.first_step_loss = hist.first_step_loss;
    tm.first_epoch_loss = hist.epoch_mean_loss.front();
    tm.final_epoch_loss = hist.epoch_mean_loss.back();
    log << job.tag << ": epoch mean loss " << tm.first_epoch_loss << " -> "
        << tm.final_epoch_loss << "\n";
    out.push_back(std::move(tm));
  }

  nlohmann::json echo = cfg.to_json();
  echo["seed"] = seed;
  write_config_echo(seed_dir / "train_config.json", echo);
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint grouping (shared by evaluate and benchmark)

namespace cli_detail {

/// Checkpoints evaluated as one logical model. The six per-variable
/// checkpoints of a single-variable run form one group; every other
/// architecture is a group of one.
struct CkptGroup {
  std::string label;
  std::vector<std::filesystem::path> paths;
};

inline std::string group_label(const std::filesystem::path& ckpt) {
  std::string tag = ckpt.stem().string();
  const auto us = tag.rfind('_');
  if (us != std::string::npos) {
    const auto suffix = tag.substr(us + 1);
    if (suffix == "final" || suffix.rfind("epoch", 0) == 0) tag = tag.substr(0, us);
  }
  if (tag.rfind("single_var", 0) == 0) return "single_var";
  return tag;
}

/// Groups checkpoints by parent directory (one directory per training seed),
/// then by label inside each directory. Ordering is lexicographic throughout
/// so repeated runs list models identically.
inline std::map<std::filesystem::path, std::vector<CkptGroup>> group_checkpoints(
    const std::vector<std::filesystem::path>& ckpts) {
  std::map<std::filesystem::path, std::map<std::string, CkptGroup>> by_dir;
  for (const auto& p : ckpts) {
    if (!std::filesystem::exists(p)) throw ConfigError("checkpoint not found: " + p.string());
    const auto label = group_label(p);
    auto& grp = by_dir[p.parent_path()][label];
    grp.label = label;
    grp.paths.push_back(p);
  }
  std::map<std::filesystem::path, std::vector<CkptGroup>> out;
  for (auto& [dir, groups] : by_dir) {
    auto& list = out[dir];
    for (auto& [label, grp] : groups) {
      std::sort(grp.paths.begin(), grp.paths.end());
      list.push_back(std::move(grp));
    }
  }
  return out;
}

inline void check_grid(const Model<float>& model, const data::GridInfo& g,
                       const std::filesystem::path& ckpt) {
  if (model.config.height != g.padded_h() || model.config.width != g.padded_w())
    throw ConfigError("checkpoint " + ckpt.string() + " expects a " +
                      std::to_string(model.config.height) + "x" +
                      std::to_string(model.config.width) + " grid but the dataset pads to " +
                      std::to_string(g.padded_h()) + "x" + std::to_string(g.padded_w()));
}

}  // namespace cli_detail

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path data_dir;
  std::filesystem::path report_dir;
  bool ssim_global = false;
};

/// Scores checkpoints on the held-out test years against the bilinear
/// baseline. Checkpoints from several seed directories are evaluated
/// separately and averaged into one report. Writes report.csv, summary.txt
/// and one error heatmap per model and variable.
inline eval::Report run_evaluate(const EvaluateOptions& opt, std::ostream& log) {
  if (opt.checkpoints.empty()) throw ConfigError("evaluate: at least one checkpoint required");
  if (opt.data_dir.empty()) throw ConfigError("evaluate: data directory required");
  if (opt.report_dir.empty()) throw ConfigError("evaluate: report directory required");

  const auto manifest = data::Manifest::load(opt.data_dir / "manifest.json");
  const auto stats = data::NormStats::load(opt.data_dir / "norm_stats.json");
  const auto split = data::split_by_decade(manifest.years);
  const auto test = data::load_samples(opt.data_dir, manifest, stats, split.test);
  const auto& g = manifest.grid;
  const std::size_t nvar = manifest.variables.size();

  const auto channel_crop = [&](const Tensor<float>& chw, std::size_t v) {
    Tensor<float> f({chw.extent(1), chw.extent(2)});
    std::copy_n(chw.data() + v * f.numel(), f.numel(), f.data());
    return eval::crop(f, g.pad_top, g.pad_bottom, g.pad_left, g.pad_right);
  };

  using Series = std::vector<Tensor<float>>;
  std::vector<Series> target(nvar), baseline(nvar);
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (std::size_t v = 0; v < nvar; ++v) {
      target[v].push_back(channel_crop(test.target[i], v));
      baseline[v].push_back(channel_crop(test.input[i], v));
    }
  }
  log << "test split: " << test.size() << " days, scoring on the " << g.hi_h << "x" << g.hi_w
      << " grid\n";

  eval::SsimConfig sc;
  sc.global_stats = opt.ssim_global;

  const auto evaluate_group = [&](const cli_detail::CkptGroup& grp) {
    eval::ModelEval me;
    me.model = grp.label;
    me.variables = manifest.variables;
    std::vector<Series> preds(nvar);
    if (grp.label == "single_var") {
      for (const auto& path : grp.paths) {
        const auto model = load_checkpoint<float>(path);
        cli_detail::check_grid(model, g, path);
        if (model.config.arch != Arch::single_var || model.config.variables.size() != 1)
          throw ConfigError("checkpoint " + path.string() +
                            " is not a single-variable model");
        const auto v = cli_detail::variable_index(manifest, model.config.variables[0]);
        if (!preds[v].empty())
          throw ConfigError("duplicate single-variable checkpoint for '" +
                            model.config.variables[0] + "' in " +
                            path.parent_path().string());
        const auto one = data::select_variable(test, v, nvar);
        for (std::size_t i = 0; i < one.size(); ++i)
          preds[v].push_back(channel_crop(model.forward_eval(one.input[i]), 0));
      }
      for (std::size_t v = 0; v < nvar; ++v)
        if (preds[v].empty())
          throw ConfigError("single-variable run is missing a checkpoint for '" +
                            manifest.variables[v] + "'");
    } else {
      const auto model = load_checkpoint<float>(grp.paths.front());
      cli_detail::check_grid(model, g, grp.paths.front());
      if (model.config.variables != manifest.variables)
        throw ConfigError("checkpoint " + grp.paths.front().string() +
                          " was trained on a different variable set than the dataset");
      for (std::size_t i = 0; i < test.size(); ++i) {
        const auto out = model.forward_eval(test.input[i]);
        for (std::size_t v = 0; v < nvar; ++v) preds[v].push_back(channel_crop(out, v));
      }
    }
    for (std::size_t v = 0; v < nvar; ++v)
      me.metrics.push_back(eval::evaluate_series(preds[v], target[v], sc));
    return me;
  };

  const auto by_dir = cli_detail::group_checkpoints(opt.checkpoints);
  std::vector<std::vector<eval::ModelEval>> run_sets;
  std::vector<eval::Report> reports;
  for (const auto& [dir, groups] : by_dir) {
    std::vector<eval::ModelEval> runs;
    eval::ModelEval bil;
    bil.model = "bilinear";
    bil.variables = manifest.variables;
    for (std::size_t v = 0; v < nvar; ++v)
      bil.metrics.push_back(eval::evaluate_series(baseline[v], target[v], sc));
    runs.push_back(std::move(bil));
    for (const auto& grp : groups) runs.push_back(evaluate_group(grp));
    reports.push_back(eval::build_report(runs));
    run_sets.push_back(std::move(runs));
  }
  const auto report = reports.size() == 1 ? reports.front() : eval::average_reports(reports);

  std::filesystem::create_directories(opt.report_dir);
  eval::write_text(opt.report_dir / "report.csv", eval::report_csv(report));
  const auto table = eval::report_table(report);
  eval::write_text(opt.report_dir / "summary.txt", table);
  log << table;

  // Error heatmaps, averaged elementwise when several seed runs are given.
  for (std::size_t r = 0; r < run_sets[0].size(); ++r) {
    for (std::size_t v = 0; v < nvar; ++v) {
      Tensor<float> avg = run_sets[0][r].metrics[v].err_map;
      for (std::size_t s = 1; s < run_sets.size(); ++s) {
        const auto& m = run_sets[s][r].metrics[v].err_map;
        if (!avg.same_shape(m)) throw DimensionError("error map shapes differ across runs");
        for (std::size_t i = 0; i < avg.numel(); ++i) avg[i] += m[i];
      }
      for (std::size_t i = 0; i < avg.numel(); ++i)
        avg[i] /= static_cast<float>(run_sets.size());
      const auto name = "errmap_" + run_sets[0][r].model + "_" + manifest.variables[v] + ".pgm";
      eval::write_pgm_heatmap(opt.report_dir / name, avg);
    }
  }

  nlohmann::json ckpts = nlohmann::json::array();
  for (const auto& p : opt.checkpoints) ckpts.push_back(p.string());
  write_config_echo(opt.report_dir / "evaluate_config.json",
                    {{"checkpoints", ckpts},
                     {"data_dir", opt.data_dir.string()},
                     {"report_dir", opt.report_dir.string()},
                     {"ssim_global", opt.ssim_global}});
  return report;
}

// ---------------------------------------------------------------------------
// benchmark

struct BenchmarkOptions {
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path data_dir;
  std::filesystem::path out_csv;  // empty: print only
  int repeat = 3;
};

struct BenchRow {
  std::string label;
  std::size_t variables = 0;
  std::size_t days = 0;
  int repeat = 0;
  double load_seconds = 0.0;
  double total_seconds = 0.0;  // median over repeats, whole test split
  double per_variable_seconds = 0.0;
};

/// Times full test-split inference per model group. Checkpoint loading is
/// timed separately and excluded from the inference figures; the median over
/// `repeat` passes is reported. A single-variable group is timed as the sum
/// of its per-variable models, so its row is directly comparable with one
/// multi-variable model covering the same variables.
inline std::vector<BenchRow> run_benchmark(const BenchmarkOptions& opt, std::ostream& log) {
  if (opt.checkpoints.empty()) throw ConfigError("benchmark: at least one checkpoint required");
  if (opt.data_dir.empty()) throw ConfigError("benchmark: data directory required");
  if (opt.repeat < 1) throw ConfigError("benchmark: repeat must be >= 1");

  const auto manifest = data::Manifest::load(opt.data_dir / "manifest.json");
  const auto stats = data::NormStats::load(opt.data_dir / "norm_stats.json");
  const auto split = data::split_by_decade(manifest.years);
  const auto test = data::load_samples(opt.data_dir, manifest, stats, split.test);
  const std::size_t nvar = manifest.variables.size();
  const auto by_dir = cli_detail::group_checkpoints(opt.checkpoints);

  using Clock = std::chrono::steady_clock;
  const auto seconds = [](Clock::time_point a, Clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };

  std::vector<BenchRow> rows;
  float sink = 0.0f;  // keeps inference results observable
  for (const auto& [dir, groups] : by_dir) {
    for (const auto& grp : groups) {
      BenchRow row;
      row.label = by_dir.size() > 1 ? dir.filename().string() + "/" + grp.label : grp.label;
      row.days = test.size();
      row.repeat = opt.repeat;

      std::vector<Model<float>> models;
      std::vector<std::vector<Tensor<float>>> inputs;  // per model, per day
      for (const auto& path : grp.paths) {
        const auto t0 = Clock::now();
        auto model = load_checkpoint<float>(path);
        row.load_seconds += seconds(t0, Clock::now());
        cli_detail::check_grid(model, manifest.grid, path);
        if (model.config.arch == Arch::single_var) {
          const auto v = cli_detail::variable_index(manifest, model.config.variables[0]);
          inputs.push_back(data::select_variable(test, v, nvar).input);
          row.variables += 1;
        } else {
          if (model.config.variables != manifest.variables)
            throw ConfigError("checkpoint " + path.string() +
                              " was trained on a different variable set than the dataset");
          inputs.push_back(test.input);
          row.variables += nvar;
        }
        models.push_back(std::move(model));
      }

      std::vector<double> totals;
      for (int r = 0; r < opt.repeat; ++r) {
        const auto t0 = Clock::now();
        for (std::size_t i = 0; i < test.size(); ++i)
          for (std::size_t m = 0; m < models.size(); ++m)
            sink += models[m].forward_eval(inputs[m][i])[0];
        totals.push_back(seconds(t0, Clock::now()));
      }
      std::sort(totals.begin(), totals.end());
      const std::size_t n = totals.size();
      row.total_seconds =
          n % 2 ? totals[n / 2] : 0.5 * (totals[n / 2 - 1] + totals[n / 2]);
      row.per_variable_seconds = row.total_seconds / static_cast<double>(row.variables);

      char line[256];
      std::snprintf(line, sizeof(line),
                    "%-24s %zu vars, %zu days: load %.3fs, inference %.3fs (%.4fs/var)\n",
                    row.label.c_str(), row.variables, row.days, row.load_seconds,
                    row.total_seconds, row.per_variable_seconds);
      log << line;
      rows.push_back(std::move(row));
    }
  }
  if (sink == 12345.678f) log << "";  // defeats dead-code elimination, never taken

  if (!opt.out_csv.empty()) {
    if (opt.out_csv.has_parent_path())
      std::filesystem::create_directories(opt.out_csv.parent_path());
    std::string csv = "model,variables,days,repeat,load_seconds,total_seconds,"
                      "per_variable_seconds\n";
    char line[256];
    for (const auto& r : rows) {
      std::snprintf(line, sizeof(line), "%s,%zu,%zu,%d,%.6g,%.6g,%.6g\n", r.label.c_str(),
                    r.variables, r.days, r.repeat, r.load_seconds, r.total_seconds,
                    r.per_variable_seconds);
      csv += line;
    }
    eval::write_text(opt.out_csv, csv);

    nlohmann::json ckpts = nlohmann::json::array();
    for (const auto& p : opt.checkpoints) ckpts.push_back(p.string());
    write_config_echo(opt.out_csv.parent_path() / "benchmark_config.json",
                      {{"checkpoints", ckpts},
                       {"data_dir", opt.data_dir.string()},
                       {"out_csv", opt.out_csv.string()},
                       {"repeat", opt.repeat}});
  }
  return rows;
}

}  // namespace dscale::cli
