#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "dscale/core/errors.hpp"
#include "dscale/core/rng.hpp"
#include "dscale/core/tensor.hpp"
#include "json.hpp"

namespace dscale::data {

// Deterministic synthetic paired-resolution weather-like fields. Every day's
// fields are a pure function of (seed, year, day): per-day draws come from a
// stream keyed on the day, the static geography from a seed-only stream.
struct SynthConfig {
  int years = 20;
  int first_year = 1;
  int days_per_year = 36;
  int hi_h = 64;
  int hi_w = 64;
  int scale = 8;  // lo grid = hi grid block-averaged scale x scale
  std::uint64_t seed = 0;

  int lo_h() const { return hi_h / scale; }
  int lo_w() const { return hi_w / scale; }

  void validate() const {
    if (years < 1) throw ConfigError("synth: years must be >= 1");
    if (days_per_year < 1 || days_per_year > 366)
      throw ConfigError("synth: days_per_year out of range");
    if (hi_h < 8 || hi_w < 8) throw ConfigError("synth: grid too small");
    if (scale < 1) throw ConfigError("synth: scale must be >= 1");
    if (hi_h % scale != 0 || hi_w % scale != 0)
      throw ConfigError("synth: hi extents must be divisible by scale");
  }
};

inline void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"years", c.years},       {"first_year", c.first_year},
       {"days_per_year", c.days_per_year},
       {"hi_h", c.hi_h},         {"hi_w", c.hi_w},
       {"scale", c.scale},       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SynthConfig& c) {
  j.at("years").get_to(c.years);
  j.at("first_year").get_to(c.first_year);
  j.at("days_per_year").get_to(c.days_per_year);
  j.at("hi_h").get_to(c.hi_h);
  j.at("hi_w").get_to(c.hi_w);
  j.at("scale").get_to(c.scale);
  j.at("seed").get_to(c.seed);
}

struct DayFields {
  Tensor<float> latent;           // smoothed latent driving the variables
  std::vector<Tensor<float>> hi;  // one [hi_h, hi_w] field per variable
  std::vector<Tensor<float>> lo;  // exact block means of the stored hi fields
};

// Block mean over scale x scale tiles, accumulated in double. Matches the
// low-res companion written by the generator bit for bit when fed the stored
// high-res f32 field.
template <class S>
Tensor<S> block_mean(const Tensor<S>& t, int scale) {
  if (t.rank() != 2) throw DimensionError("block_mean expects [H, W]");
  const auto h = t.extent(0), w = t.extent(1);
  const auto s = static_cast<std::size_t>(scale);
  if (scale < 1 || h % s != 0 || w % s != 0)
    throw DimensionError("block_mean: extents not divisible by scale");
  Tensor<S> out({h / s, w / s});
  const double inv = 1.0 / static_cast<double>(s * s);
  for (std::size_t by = 0; by < h / s; ++by)
    for (std::size_t bx = 0; bx < w / s; ++bx) {
      double acc = 0.0;
      for (std::size_t y = by * s; y < (by + 1) * s; ++y)
        for (std::size_t x = bx * s; x < (bx + 1) * s; ++x)
          acc += static_cast<double>(t.at(y, x));
      out.at(by, bx) = static_cast<S>(acc * inv);
    }
  return out;
}

// Separable box blur with replicated edges.
template <class S>
Tensor<S> box_blur(const Tensor<S>& t, int radius, int passes) {
  if (t.rank() != 2) throw DimensionError("box_blur expects [H, W]");
  const auto h = static_cast<std::ptrdiff_t>(t.extent(0));
  const auto w = static_cast<std::ptrdiff_t>(t.extent(1));
  Tensor<S> cur = t;
  Tensor<S> tmp(t.shape());
  const S inv = S(1) / S(2 * radius + 1);
  for (int p = 0; p < passes; ++p) {
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        S acc = 0;
        for (int d = -radius; d <= radius; ++d) {
          const auto xx = std::clamp<std::ptrdiff_t>(x + d, 0, w - 1);
          acc += cur.at(static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
        }
        tmp.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc * inv;
      }
    for (std::ptrdiff_t x = 0; x < w; ++x)
      for (std::ptrdiff_t y = 0; y < h; ++y) {
        S acc = 0;
        for (int d = -radius; d <= radius; ++d) {
          const auto yy = std::clamp<std::ptrdiff_t>(y + d, 0, h - 1);
          acc += tmp.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(x));
        }
        cur.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc * inv;
      }
  }
  return cur;
}

namespace synth_detail {

constexpr std::uint64_t kGeoStream = 0x67656f6772617068ULL;
constexpr std::uint64_t kDayStream = 0x6461796669656c64ULL;

constexpr int kModes = 6;
constexpr double kNoiseStd = 0.12;
constexpr double kSeasonAmp = 0.35;
constexpr double kDriftMax = 0.15;
constexpr int kLatentRadius = 1;   // blur radius for the exposed latent
constexpr int kLatentPasses = 1;
constexpr int kZgRadius = 4;       // heavier blur for the smoothest variable
constexpr double kTasGain = 0.8;
constexpr double kTasGeo = 0.18;
constexpr double kWindGrad = 0.8;
constexpr double kWindGeo = 0.25;
constexpr double kWindTexture = 0.12;
constexpr double kZgScale = 0.9;
constexpr double kTpThreshold = 1.05;
constexpr double kTpPower = 1.5;
constexpr double kSunLatent = 0.55;
constexpr double kSunBlob = 0.45;
constexpr double kLwLatent = 0.45;
constexpr double kLwGeo = 0.25;
constexpr double kLwBlob = 0.30;

inline double population_mean(const Tensor<double>& t) {
  double mean = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) mean += t[i];
  return mean / static_cast<double>(t.numel());
}

inline double population_std(const Tensor<double>& t) {
  const double mean = population_mean(t);
  double var = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) var += (t[i] - mean) * (t[i] - mean);
  return std::sqrt(var / static_cast<double>(t.numel()));
}

// Shift and scale to zero mean and unit population std.
inline Tensor<double> standardized(const Tensor<double>& t) {
  const double mean = population_mean(t);
  const double sd = population_std(t);
  const double inv = sd > 1e-12 ? 1.0 / sd : 0.0;
  Tensor<double> out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) out[i] = (t[i] - mean) * inv;
  return out;
}

struct Blob {
  double cx, cy, sigma;
};

inline Tensor<double> blob_mask(const std::vector<Blob>& blobs, int h, int w, bool clip) {
  Tensor<double> out({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (int y = 0; y < h; ++y) {
    const double ny = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
    for (int x = 0; x < w; ++x) {
      const double nx = w > 1 ? static_cast<double>(x) / (w - 1) : 0.0;
      double acc = 0.0;
      for (const auto& b : blobs) {
        const double dx = nx - b.cx, dy = ny - b.cy;
        acc += std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
      }
      out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
          clip ? std::min(1.0, acc) : acc;
    }
  }
  return out;
}

inline Tensor<double> gradient_magnitude(const Tensor<double>& z) {
  const auto h = static_cast<std::ptrdiff_t>(z.extent(0));
  const auto w = static_cast<std::ptrdiff_t>(z.extent(1));
  Tensor<double> out(z.shape());
  auto v = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    y = std::clamp<std::ptrdiff_t>(y, 0, h - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, w - 1);
    return z.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
  };
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      const double gx = 0.5 * (v(y, x + 1) - v(y, x - 1));
      const double gy = 0.5 * (v(y + 1, x) - v(y - 1, x));
      out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
          std::sqrt(gx * gx + gy * gy);
    }
  return out;
}

}  // namespace synth_detail

class SynthGenerator {
 public:
  explicit SynthGenerator(const SynthConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    geography_ = make_geography();
  }

  static const std::vector<std::string>& variable_names() {
    static const std::vector<std::string> names = {"tas", "sfcWind", "zg500",
                                                   "tp",  "rsds",    "rlds"};
    return names;
  }

  const SynthConfig& config() const { return cfg_; }
  const Tensor<double>& geography() const { return geography_; }

  DayFields day(int year, int day_of_year) const {
    namespace sd = synth_detail;
    if (year < cfg_.first_year || year >= cfg_.first_year + cfg_.years)
      throw DataError("synth: year " + std::to_string(year) + " outside dataset");
    if (day_of_year < 0 || day_of_year >= cfg_.days_per_year)
      throw DataError("synth: day " + std::to_string(day_of_year) + " outside year");

    const auto h = static_cast<std::size_t>(cfg_.hi_h);
    const auto w = static_cast<std::size_t>(cfg_.hi_w);
    constexpr double kTau = 2.0 * std::numbers::pi;
    const auto day_key = static_cast<std::uint64_t>(year) * 512ULL +
                         static_cast<std::uint64_t>(day_of_year);
    Rng rng(seed_mix(seed_mix(cfg_.seed, sd::kDayStream), day_key));

    // Fixed draw order: modes, noise field, texture field, two blob sets.
    struct Mode {
      int fx, fy;
      double amp, phase;
    };
    std::vector<Mode> modes(sd::kModes);
    for (auto& m : modes) {
      m.fx = 1 + static_cast<int>(rng.below(3));
      m.fy = 1 + static_cast<int>(rng.below(3));
      m.amp = rng.uniform(0.5, 1.0);
      m.phase = rng.uniform(0.0, kTau);
    }
    Tensor<double> white({h, w});
    for (std::size_t i = 0; i < white.numel(); ++i) white[i] = rng.normal();
    Tensor<double> white2({h, w});
    for (std::size_t i = 0; i < white2.numel(); ++i) white2[i] = rng.normal();
    auto draw_blobs = [&rng] {
      std::vector<sd::Blob> bs(3);
      for (auto& b : bs) {
        b.cx = rng.uniform(0.0, 1.0);
        b.cy = rng.uniform(0.0, 1.0);
        b.sigma = rng.uniform(0.10, 0.22);
      }
      return bs;
    };
    const auto blobs_sun = draw_blobs();
    const auto blobs_lw = draw_blobs();

    // Latent: standardized sinusoid mix + filtered noise + seasonal cycle
    // (meridionally modulated) + linear multi-year drift.
    Tensor<double> zraw({h, w});
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (const auto& m : modes)
          acc += m.amp *
                 std::sin(kTau * (m.fx * static_cast<double>(x) / static_cast<double>(w) +
                                  m.fy * static_cast<double>(y) / static_cast<double>(h)) +
                          m.phase);
        zraw.at(y, x) = acc;
      }
    Tensor<double> z = sd::standardized(zraw);
    const Tensor<double> noise = sd::standardized(box_blur(white, 2, 2));
    const double season =
        sd::kSeasonAmp * std::sin(kTau * (day_of_year + 0.5) / cfg_.days_per_year);
    const double drift = sd::kDriftMax * static_cast<double>(year - cfg_.first_year) /
                         static_cast<double>(std::max(1, cfg_.years - 1));
    for (std::size_t y = 0; y < h; ++y) {
      const double lat = h > 1 ? 2.0 * static_cast<double>(y) / (h - 1) - 1.0 : 0.0;
      for (std::size_t x = 0; x < w; ++x)
        z.at(y, x) += sd::kNoiseStd * noise.at(y, x) + season * lat + drift;
    }
    const Tensor<double> latent = box_blur(z, sd::kLatentRadius, sd::kLatentPasses);
    const Tensor<double> zg = box_blur(z, sd::kZgRadius, 2);

    Tensor<double> gradn = sd::gradient_magnitude(z);
    const double gsd = sd::population_std(gradn);
    if (gsd > 1e-12)
      for (std::size_t i = 0; i < gradn.numel(); ++i) gradn[i] /= gsd;
    const Tensor<double> texture = sd::standardized(box_blur(white2, 1, 1));
    const Tensor<double> sun_mask = sd::blob_mask(blobs_sun, cfg_.hi_h, cfg_.hi_w, true);
    const Tensor<double> lw_mask = sd::blob_mask(blobs_lw, cfg_.hi_h, cfg_.hi_w, true);

    DayFields out;
    out.hi.resize(variable_names().size());
    for (auto& t : out.hi) t = Tensor<float>({h, w});
    for (std::size_t i = 0; i < h * w; ++i) {
      const double zi = z[i];
      const double li = latent[i];
      const double gi = geography_[i];
      out.hi[0][i] = static_cast<float>(std::tanh(sd::kTasGain * zi) + sd::kTasGeo * gi);
      out.hi[1][i] = static_cast<float>(sd::kWindGrad * gradn[i] + sd::kWindGeo * 0.5 * (gi + 1.0) +
                                        sd::kWindTexture * texture[i]);
      out.hi[2][i] = static_cast<float>(sd::kZgScale * zg[i]);
      const double excess = zi - sd::kTpThreshold;
      out.hi[3][i] = excess > 0.0 ? static_cast<float>(std::pow(excess, sd::kTpPower)) : 0.0f;
      out.hi[4][i] =
          static_cast<float>(sd::kSunLatent * li + sd::kSunBlob * (2.0 * sun_mask[i] - 1.0));
      out.hi[5][i] = static_cast<float>(sd::kLwLatent * li + sd::kLwGeo * gi +
                                        sd::kLwBlob * (2.0 * lw_mask[i] - 1.0));
    }
    out.lo.resize(out.hi.size());
    for (std::size_t v = 0; v < out.hi.size(); ++v) out.lo[v] = block_mean(out.hi[v], cfg_.scale);
    out.latent = Tensor<float>({h, w});
    for (std::size_t i = 0; i < h * w; ++i) out.latent[i] = static_cast<float>(latent[i]);
    return out;
  }

 private:
  Tensor<double> make_geography() const {
    namespace sd = synth_detail;
    Rng rng(seed_mix(cfg_.seed, sd::kGeoStream));
    std::vector<sd::Blob> blobs(5);
    for (auto& b : blobs) {
      b.cx = rng.uniform(0.0, 1.0);
      b.cy = rng.uniform(0.0, 1.0);
      b.sigma = rng.uniform(0.10, 0.25);
    }
    Tensor<double> raw = sd::blob_mask(blobs, cfg_.hi_h, cfg_.hi_w, false);
    Tensor<double> g(raw.shape());
    for (std::size_t i = 0; i < raw.numel(); ++i) g[i] = std::tanh(4.0 * (raw[i] - 0.6));
    return g;
  }

  SynthConfig cfg_;
  Tensor<double> geography_;
};

}  // namespace dscale::data
