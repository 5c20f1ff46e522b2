#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dscale/core/errors.hpp"
#include "dscale/core/tensor.hpp"
#include "dscale/eval/metrics.hpp"

namespace dscale::eval {

/// One evaluated model over the test split: per-variable metric batteries in
/// variable order.
struct ModelEval {
  std::string model;
  std::vector<std::string> variables;
  std::vector<SeriesMetrics<float>> metrics;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"mse",          "mae",           "ssim",
                                                 "spatial_corr", "temporal_corr", "leakage"};
  return names;
}

/// +1 higher is better, -1 lower is better, 0 excluded from best-marking
/// (leakage is a diagnostic centered on 1, not a score).
inline int metric_direction(const std::string& m) {
  if (m == "mse" || m == "mae") return -1;
  if (m == "ssim" || m == "spatial_corr" || m == "temporal_corr") return 1;
  return 0;
}

struct ReportRow {
  std::string model, variable, metric;
  Aggregate agg;
};

struct Report {
  std::vector<ReportRow> rows;
};

namespace eval_detail {

inline const Aggregate& pick(const SeriesMetrics<float>& m, const std::string& name) {
  if (name == "mse") return m.mse;
  if (name == "mae") return m.mae;
  if (name == "ssim") return m.ssim;
  if (name == "spatial_corr") return m.spatial_corr;
  if (name == "temporal_corr") return m.temporal_corr;
  if (name == "leakage") return m.leakage;
  throw ConfigError("unknown metric '" + name + "'");
}

}  // namespace eval_detail

inline Report build_report(const std::vector<ModelEval>& runs) {
  if (runs.empty()) throw ConfigError("report: no model runs");
  for (const ModelEval& r : runs) {
    if (r.variables.size() != r.metrics.size())
      throw ConfigError("report: run '" + r.model + "' has mismatched variables/metrics");
    if (r.variables != runs[0].variables)
      throw ConfigError("report: variable set of '" + r.model + "' differs from '" +
                        runs[0].model + "'");
  }
  Report out;
  for (const ModelEval& r : runs)
    for (std::size_t v = 0; v < r.variables.size(); ++v)
      for (const std::string& m : metric_names())
        out.rows.push_back({r.model, r.variables[v], m, eval_detail::pick(r.metrics[v], m)});
  return out;
}

/// Cell-wise arithmetic mean across same-shaped reports (independent seeds):
/// mean and std averaged, counts summed.
inline Report average_reports(const std::vector<Report>& seeds) {
  if (seeds.empty()) throw ConfigError("report: nothing to average");
  Report out = seeds[0];
  for (std::size_t s = 1; s < seeds.size(); ++s) {
    if (seeds[s].rows.size() != out.rows.size())
      throw ConfigError("report: seed reports have different row sets");
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
      const ReportRow& a = out.rows[i];
      const ReportRow& b = seeds[s].rows[i];
      if (a.model != b.model || a.variable != b.variable || a.metric != b.metric)
        throw ConfigError("report: seed reports have different row sets");
      out.rows[i].agg.mean += b.agg.mean;
      out.rows[i].agg.std += b.agg.std;
      out.rows[i].agg.n += b.agg.n;
      out.rows[i].agg.skipped += b.agg.skipped;
    }
  }
  const double inv = 1.0 / static_cast<double>(seeds.size());
  for (ReportRow& r : out.rows) {
    r.agg.mean *= inv;
    r.agg.std *= inv;
  }
  return out;
}

inline std::string report_csv(const Report& rep) {
  std::string out = "model,variable,metric,mean,std,n,skipped\n";
  char line[256];
  for (const ReportRow& r : rep.rows) {
    std::snprintf(line, sizeof(line), "%s,%s,%s,%.12g,%.12g,%zu,%zu\n", r.model.c_str(),
                  r.variable.c_str(), r.metric.c_str(), r.agg.mean, r.agg.std, r.agg.n,
                  r.agg.skipped);
    out += line;
  }
  return out;
}

/// Fixed-width per-variable table, one column per model. Best value per row
/// (ties included) is marked '*'; leakage rows carry no marking.
inline std::string report_table(const Report& rep) {
  std::vector<std::string> models;
  std::vector<std::string> variables;
  for (const ReportRow& r : rep.rows) {
    if (std::find(models.begin(), models.end(), r.model) == models.end())
      models.push_back(r.model);
    if (std::find(variables.begin(), variables.end(), r.variable) == variables.end())
      variables.push_back(r.variable);
  }
  const auto cell_of = [&](const std::string& mo, const std::string& va,
                           const std::string& me) -> const Aggregate* {
    for (const ReportRow& r : rep.rows)
      if (r.model == mo && r.variable == va && r.metric == me) return &r.agg;
    return nullptr;
  };

  std::string out =
      "# mean +- std, population sigma; n = evaluated, k = skipped\n"
      "# best per row marked '*' (ties included); leakage is diagnostic only\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-10s %-14s", "variable", "metric");
  out += buf;
  for (const std::string& mo : models) {
    std::snprintf(buf, sizeof(buf), " %-26s", mo.c_str());
    out += buf;
  }
  out += "\n";
  for (const std::string& va : variables) {
    for (const std::string& me : metric_names()) {
      const int dir = metric_direction(me);
      double best = 0.0;
      bool have_best = false;
      if (dir != 0) {
        for (const std::string& mo : models) {
          if (const Aggregate* a = cell_of(mo, va, me)) {
            if (a->n == 0) continue;
            if (!have_best || (dir > 0 ? a->mean > best : a->mean < best)) {
              best = a->mean;
              have_best = true;
            }
          }
        }
      }
      std::snprintf(buf, sizeof(buf), "%-10s %-14s", va.c_str(), me.c_str());
      out += buf;
      for (const std::string& mo : models) {
        const Aggregate* a = cell_of(mo, va, me);
        if (!a) {
          std::snprintf(buf, sizeof(buf), " %-26s", "-");
          out += buf;
          continue;
        }
        char cbuf[96];
        std::string cell;
        if (a->n == 0) {
          cell = "-";
        } else {
          std::snprintf(cbuf, sizeof(cbuf), "%.5g +- %.3g", a->mean, a->std);
          cell = cbuf;
          if (dir != 0 && have_best && a->mean == best) cell += "*";
        }
        if (a->skipped) cell += " (k=" + std::to_string(a->skipped) + ")";
        std::snprintf(buf, sizeof(buf), " %-26s", cell.c_str());
        out += buf;
      }
      out += "\n";
    }
    out += "\n";
  }
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

/// 8-bit binary PGM with linear min-max scaling; the mapping is recorded in a
/// "<name>.scale.txt" sidecar so values stay recoverable.
inline void write_pgm_heatmap(const std::filesystem::path& path, const Tensor<float>& map) {
  if (map.rank() != 2) throw DimensionError("heatmap expects [H, W]");
  const std::size_t h = map.extent(0), w = map.extent(1);
  float lo = map[0], hi = map[0];
  for (std::size_t i = 0; i < map.numel(); ++i) {
    lo = std::min(lo, map[i]);
    hi = std::max(hi, map[i]);
  }
  const double span = static_cast<double>(hi) - static_cast<double>(lo);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << w << " " << h << "\n255\n";
  std::string bytes(map.numel(), '\0');
  for (std::size_t i = 0; i < map.numel(); ++i) {
    const double u = span > 0.0 ? (static_cast<double>(map[i]) - lo) / span : 0.0;
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(u * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write on " + path.string());

  char sc[128];
  std::snprintf(sc, sizeof(sc), "min %.9g\nmax %.9g\n", static_cast<double>(lo),
                static_cast<double>(hi));
  write_text(path.string() + ".scale.txt", sc);
}

}  // namespace dscale::eval
