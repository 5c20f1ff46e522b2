#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dscale/core/errors.hpp"
#include "dscale/core/image_ops.hpp"
#include "dscale/core/rng.hpp"
#include "dscale/core/tensor.hpp"
#include "dscale/data/field_file.hpp"
#include "dscale/data/synth.hpp"
#include "json.hpp"

namespace dscale::data {

struct GridInfo {
  int hi_h = 0, hi_w = 0;
  int lo_h = 0, lo_w = 0;
  int pad_top = 0, pad_bottom = 0, pad_left = 0, pad_right = 0;

  int padded_h() const { return hi_h + pad_top + pad_bottom; }
  int padded_w() const { return hi_w + pad_left + pad_right; }
};

// Bottom/right replication pads that make the hi grid divisible by `multiple`.
inline GridInfo grid_for(int hi_h, int hi_w, int lo_h, int lo_w, int multiple) {
  if (multiple < 1) throw ConfigError("grid_for: multiple must be >= 1");
  GridInfo g;
  g.hi_h = hi_h;
  g.hi_w = hi_w;
  g.lo_h = lo_h;
  g.lo_w = lo_w;
  g.pad_bottom = (multiple - hi_h % multiple) % multiple;
  g.pad_right = (multiple - hi_w % multiple) % multiple;
  return g;
}

inline void to_json(nlohmann::json& j, const GridInfo& g) {
  j = {{"hiH", g.hi_h},         {"hiW", g.hi_w},
       {"loH", g.lo_h},         {"loW", g.lo_w},
       {"padTop", g.pad_top},   {"padBottom", g.pad_bottom},
       {"padLeft", g.pad_left}, {"padRight", g.pad_right}};
}

inline void from_json(const nlohmann::json& j, GridInfo& g) {
  j.at("hiH").get_to(g.hi_h);
  j.at("hiW").get_to(g.hi_w);
  j.at("loH").get_to(g.lo_h);
  j.at("loW").get_to(g.lo_w);
  j.at("padTop").get_to(g.pad_top);
  j.at("padBottom").get_to(g.pad_bottom);
  j.at("padLeft").get_to(g.pad_left);
  j.at("padRight").get_to(g.pad_right);
}

struct FileEntry {
  std::string var;
  int year = 0;
  int day = 0;
  std::string grid;  // "hi" or "lo"
  std::string path;  // relative to the dataset root
};

inline void to_json(nlohmann::json& j, const FileEntry& f) {
  j = {{"var", f.var}, {"year", f.year}, {"day", f.day}, {"grid", f.grid}, {"path", f.path}};
}

inline void from_json(const nlohmann::json& j, FileEntry& f) {
  j.at("var").get_to(f.var);
  j.at("year").get_to(f.year);
  j.at("day").get_to(f.day);
  j.at("grid").get_to(f.grid);
  j.at("path").get_to(f.path);
}

struct Manifest {
  std::vector<std::string> variables;
  GridInfo grid;
  std::vector<int> years;
  int days_per_year = 0;
  std::vector<FileEntry> files;
  std::uint64_t generator_seed = 0;
  nlohmann::json generator_params;

  void save(const std::filesystem::path& path) const {
    nlohmann::json j = {{"variables", variables},
                        {"grid", grid},
                        {"years", years},
                        {"days_per_year", days_per_year},
                        {"files", files},
                        {"generator", {{"seed", generator_seed}, {"params", generator_params}}}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path.string());
    out << j.dump(2) << "\n";
  }

  static Manifest load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path.string());
    Manifest m;
    try {
      const auto j = nlohmann::json::parse(in);
      j.at("variables").get_to(m.variables);
      j.at("grid").get_to(m.grid);
      j.at("years").get_to(m.years);
      j.at("days_per_year").get_to(m.days_per_year);
      j.at("files").get_to(m.files);
      m.generator_seed = j.at("generator").at("seed").get<std::uint64_t>();
      m.generator_params = j.at("generator").at("params");
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed manifest " + path.string() + ": " + e.what());
    }
    return m;
  }
};

// Lookup table from (grid, var, year, day) to a manifest entry.
class FileIndex {
 public:
  explicit FileIndex(const Manifest& m) : manifest_(&m) {
    for (std::size_t i = 0; i < m.files.size(); ++i)
      index_.emplace(key(m.files[i].grid, m.files[i].var, m.files[i].year, m.files[i].day), i);
  }

  const FileEntry& at(const std::string& grid, const std::string& var, int year, int day) const {
    const auto it = index_.find(key(grid, var, year, day));
    if (it == index_.end())
      throw DataError("manifest has no " + grid + " field for " + var + " year " +
                      std::to_string(year) + " day " + std::to_string(day));
    return manifest_->files[it->second];
  }

 private:
  static std::string key(const std::string& grid, const std::string& var, int year, int day) {
    return grid + "|" + var + "|" + std::to_string(year) + "|" + std::to_string(day);
  }

  const Manifest* manifest_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct NormStats {
  struct Range {
    double lo = 0.0, hi = 1.0;
  };
  std::map<std::string, Range> by_var;

  const Range& range(const std::string& var) const {
    const auto it = by_var.find(var);
    if (it == by_var.end()) throw DataError("no normalization stats for variable " + var);
    if (!(it->second.hi > it->second.lo))
      throw DataError("degenerate normalization range for variable " + var);
    return it->second;
  }

  void normalize_inplace(Tensor<float>& t, const std::string& var) const {
    const auto& r = range(var);
    const float lo = static_cast<float>(r.lo);
    const float inv = static_cast<float>(1.0 / (r.hi - r.lo));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = (t[i] - lo) * inv;
  }

  void denormalize_inplace(Tensor<float>& t, const std::string& var) const {
    const auto& r = range(var);
    const float lo = static_cast<float>(r.lo);
    const float span = static_cast<float>(r.hi - r.lo);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = t[i] * span + lo;
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [var, r] : by_var) j[var] = {{"min", r.lo}, {"max", r.hi}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write norm stats: " + path.string());
    out << j.dump(2) << "\n";
  }

  static NormStats load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open norm stats: " + path.string());
    NormStats s;
    try {
      const auto j = nlohmann::json::parse(in);
      for (const auto& [var, r] : j.items())
        s.by_var[var] = {r.at("min").get<double>(), r.at("max").get<double>()};
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed norm stats " + path.string() + ": " + e.what());
    }
    return s;
  }
};

struct YearSplit {
  std::vector<int> train, test;
};

// Held-out test years are those divisible by ten, one per decade.
inline YearSplit split_by_decade(const std::vector<int>& years) {
  YearSplit s;
  for (int y : years) (y % 10 == 0 ? s.test : s.train).push_back(y);
  if (s.train.empty() || s.test.empty())
    throw ConfigError("split_by_decade: year range " +
                      (years.empty() ? std::string("(empty)")
                                     : std::to_string(years.front()) + ".." +
                                           std::to_string(years.back())) +
                      " leaves an empty split");
  return s;
}

// Model-ready samples: channel-stacked, normalized, regridded and padded.
// `input` holds the low-res fields bilinearly regridded to the hi grid, so it
// doubles as the interpolation baseline during evaluation.
struct SampleSet {
  std::vector<std::pair<int, int>> days;  // (year, day_of_year)
  std::vector<Tensor<float>> input;       // each [C, paddedH, paddedW]
  std::vector<Tensor<float>> target;      // each [C, paddedH, paddedW]

  std::size_t size() const { return days.size(); }
};

inline SampleSet load_samples(const std::filesystem::path& root, const Manifest& m,
                              const NormStats& stats, const std::vector<int>& years) {
  const FileIndex index(m);
  const auto& g = m.grid;
  const auto c = m.variables.size();
  SampleSet set;
  for (int year : years) {
    if (std::find(m.years.begin(), m.years.end(), year) == m.years.end())
      throw DataError("year " + std::to_string(year) + " not in manifest");
    for (int day = 0; day < m.days_per_year; ++day) {
      Tensor<float> lo({c, static_cast<std::size_t>(g.lo_h), static_cast<std::size_t>(g.lo_w)});
      Tensor<float> hi({c, static_cast<std::size_t>(g.hi_h), static_cast<std::size_t>(g.hi_w)});
      for (std::size_t v = 0; v < c; ++v) {
        auto lof = read_field<float>(root / index.at("lo", m.variables[v], year, day).path);
        if (lof.shape() !=
            Shape{static_cast<std::size_t>(g.lo_h), static_cast<std::size_t>(g.lo_w)})
          throw DataError("low-res field extent mismatch for " + m.variables[v]);
        stats.normalize_inplace(lof, m.variables[v]);
        std::copy_n(lof.data(), lof.numel(), lo.data() + v * lof.numel());
        auto hif = read_field<float>(root / index.at("hi", m.variables[v], year, day).path);
        if (hif.shape() !=
            Shape{static_cast<std::size_t>(g.hi_h), static_cast<std::size_t>(g.hi_w)})
          throw DataError("high-res field extent mismatch for " + m.variables[v]);
        stats.normalize_inplace(hif, m.variables[v]);
        std::copy_n(hif.data(), hif.numel(), hi.data() + v * hif.numel());
      }
      auto up = ops::bilinear_resize(lo, static_cast<std::size_t>(g.hi_h),
                                     static_cast<std::size_t>(g.hi_w));
      set.input.push_back(ops::replication_pad(up, g.pad_top, g.pad_bottom, g.pad_left,
                                               g.pad_right));
      set.target.push_back(ops::replication_pad(hi, g.pad_top, g.pad_bottom, g.pad_left,
                                                g.pad_right));
      set.days.emplace_back(year, day);
    }
  }
  return set;
}

// Single-channel view of one variable, for single-variable model training.
inline SampleSet select_variable(const SampleSet& set, std::size_t var_index,
                                 std::size_t var_count) {
  SampleSet out;
  out.days = set.days;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& in = set.input[i];
    const auto& tg = set.target[i];
    if (in.extent(0) != var_count || tg.extent(0) != var_count)
      throw DimensionError("select_variable: channel count mismatch");
    const auto hw = in.extent(1) * in.extent(2);
    Tensor<float> ic({1, in.extent(1), in.extent(2)});
    Tensor<float> tc({1, tg.extent(1), tg.extent(2)});
    std::copy_n(in.data() + var_index * hw, hw, ic.data());
    std::copy_n(tg.data() + var_index * hw, hw, tc.data());
    out.input.push_back(std::move(ic));
    out.target.push_back(std::move(tc));
  }
  return out;
}

// Uniform shuffled sampler. Each epoch starts a fresh seeded permutation;
// drawing past the end reshuffles, so an epoch of exactly n draws visits every
// sample once.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed), rng_(seed) {
    if (n == 0) throw ConfigError("EpochSampler: empty sample set");
    order_.resize(n);
    begin_epoch(0);
  }

  void begin_epoch(int epoch) {
    rng_ = Rng(seed_mix(seed_, static_cast<std::uint64_t>(epoch)));
    reshuffle();
  }

  std::size_t next() {
    if (cursor_ == n_) reshuffle();
    return order_[cursor_++];
  }

 private:
  void reshuffle() {
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    rng_.shuffle(order_);
    cursor_ = 0;
  }

  std::size_t n_;
  std::uint64_t seed_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct GenerateResult {
  Manifest manifest;
  NormStats stats;
};

// Writes the full synthetic dataset: field files, manifest.json and
// norm_stats.json (min/max over the train-split hi fields only).
inline GenerateResult generate_dataset(const SynthConfig& cfg,
                                       const std::filesystem::path& out_dir,
                                       int pad_multiple = 8) {
  cfg.validate();
  const SynthGenerator gen(cfg);
  const auto& vars = SynthGenerator::variable_names();
  std::filesystem::create_directories(out_dir / "fields");

  Manifest m;
  m.variables = vars;
  m.grid = grid_for(cfg.hi_h, cfg.hi_w, cfg.lo_h(), cfg.lo_w(), pad_multiple);
  for (int y = 0; y < cfg.years; ++y) m.years.push_back(cfg.first_year + y);
  m.days_per_year = cfg.days_per_year;
  m.generator_seed = cfg.seed;
  m.generator_params = cfg;

  const auto split = split_by_decade(m.years);
  NormStats stats;
  for (const auto& v : vars) stats.by_var[v] = {1e300, -1e300};

  char name[128];
  for (int year : m.years) {
    const bool in_train =
        std::find(split.train.begin(), split.train.end(), year) != split.train.end();
    for (int day = 0; day < cfg.days_per_year; ++day) {
      const auto fields = gen.day(year, day);
      for (std::size_t v = 0; v < vars.size(); ++v) {
        std::snprintf(name, sizeof(name), "fields/%s_y%04d_d%03d_hr.fld", vars[v].c_str(), year,
                      day);
        write_field(out_dir / name, fields.hi[v]);
        m.files.push_back({vars[v], year, day, "hi", name});
        if (in_train) {
          auto& r = stats.by_var[vars[v]];
          for (std::size_t i = 0; i < fields.hi[v].numel(); ++i) {
            r.lo = std::min(r.lo, static_cast<double>(fields.hi[v][i]));
            r.hi = std::max(r.hi, static_cast<double>(fields.hi[v][i]));
          }
        }
        std::snprintf(name, sizeof(name), "fields/%s_y%04d_d%03d_lr.fld", vars[v].c_str(), year,
                      day);
        write_field(out_dir / name, fields.lo[v]);
        m.files.push_back({vars[v], year, day, "lo", name});
      }
    }
  }
  m.save(out_dir / "manifest.json");
  stats.save(out_dir / "norm_stats.json");
  return {std::move(m), std::move(stats)};
}

}  // namespace dscale::data
