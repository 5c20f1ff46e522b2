#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dscale/core/errors.hpp"
#include "dscale/core/tensor.hpp"

namespace dscale::eval {

namespace eval_detail {

template <class S>
void require_same_2d(const char* who, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError(std::string(who) + " expects [H, W] fields");
  if (!a.same_shape(b))
    throw DimensionError(std::string(who) + ": shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline std::vector<double> gaussian_kernel(int n, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(n));
  const double c = (n - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = (i - c) / sigma;
    k[static_cast<std::size_t>(i)] = std::exp(-0.5 * d * d);
    sum += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Valid-mode separable correlation with a symmetric kernel:
/// [H, W] -> [H-n+1, W-n+1], double accumulation.
inline Tensor<double> valid_sep_conv(const Tensor<double>& f, const std::vector<double>& k) {
  const std::size_t n = k.size();
  const std::size_t h = f.extent(0), w = f.extent(1);
  const std::size_t wo = w - n + 1;
  Tensor<double> rows({h, wo});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < wo; ++j) {
      double acc = 0.0;
      for (std::size_t u = 0; u < n; ++u) acc += k[u] * f.at(i, j + u);
      rows.at(i, j) = acc;
    }
  const std::size_t ho = h - n + 1;
  Tensor<double> out({ho, wo});
  for (std::size_t i = 0; i < ho; ++i)
    for (std::size_t j = 0; j < wo; ++j) {
      double acc = 0.0;
      for (std::size_t u = 0; u < n; ++u) acc += k[u] * rows.at(i + u, j);
      out.at(i, j) = acc;
    }
  return out;
}

}  // namespace eval_detail

/// Remove padding rows/columns from a [H, W] field.
template <class S>
Tensor<S> crop(const Tensor<S>& f, std::size_t top, std::size_t bottom, std::size_t left,
               std::size_t right) {
  if (f.rank() != 2) throw DimensionError("crop expects [H, W]");
  const std::size_t h = f.extent(0), w = f.extent(1);
  if (top + bottom >= h || left + right >= w)
    throw DimensionError("crop: nothing left of " + shape_str(f.shape()));
  Tensor<S> out({h - top - bottom, w - left - right});
  for (std::size_t i = 0; i < out.extent(0); ++i)
    for (std::size_t j = 0; j < out.extent(1); ++j) out.at(i, j) = f.at(top + i, left + j);
  return out;
}

template <class S>
double mse(const Tensor<S>& a, const Tensor<S>& b) {
  eval_detail::require_same_2d("mse", a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

template <class S>
double mae(const Tensor<S>& a, const Tensor<S>& b) {
  eval_detail::require_same_2d("mae", a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    acc += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return acc / static_cast<double>(a.numel());
}

/// Standard SSIM defaults for data normalized to [0, 1]. global_stats replaces
/// the sliding window with one set of moments over the whole field.
struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
  bool global_stats = false;
};

template <class S>
double ssim(const Tensor<S>& a, const Tensor<S>& b, const SsimConfig& cfg = {}) {
  eval_detail::require_same_2d("ssim", a, b);
  if (cfg.window < 2 || cfg.sigma <= 0.0 || cfg.data_range <= 0.0)
    throw ConfigError("ssim: bad window/sigma/range");
  const double c1 = (cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range);
  const double c2 = (cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range);

  const auto value = [&](double mx, double my, double vx, double vy, double cov) {
    return ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
           ((mx * mx + my * my + c1) * (vx + vy + c2));
  };

  if (cfg.global_stats) {
    const std::size_t n = a.numel();
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sx += static_cast<double>(a[i]);
      sy += static_cast<double>(b[i]);
    }
    const double mx = sx / n, my = sy / n;
    double vx = 0.0, vy = 0.0, cov = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = static_cast<double>(a[i]) - mx;
      const double dy = static_cast<double>(b[i]) - my;
      vx += dx * dx;
      vy += dy * dy;
      cov += dx * dy;
    }
    return value(mx, my, vx / n, vy / n, cov / n);
  }

  const std::size_t win = static_cast<std::size_t>(cfg.window);
  if (a.extent(0) < win || a.extent(1) < win)
    throw ConfigError("ssim: field " + shape_str(a.shape()) + " smaller than " +
                      std::to_string(cfg.window) + "-pixel window");
  const std::vector<double> k = eval_detail::gaussian_kernel(cfg.window, cfg.sigma);

  const Tensor<double> x = a.template cast<double>();
  const Tensor<double> y = b.template cast<double>();
  Tensor<double> xx(x.shape()), yy(x.shape()), xy(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const Tensor<double> mx = eval_detail::valid_sep_conv(x, k);
  const Tensor<double> my = eval_detail::valid_sep_conv(y, k);
  const Tensor<double> mxx = eval_detail::valid_sep_conv(xx, k);
  const Tensor<double> myy = eval_detail::valid_sep_conv(yy, k);
  const Tensor<double> mxy = eval_detail::valid_sep_conv(xy, k);

  double acc = 0.0;
  for (std::size_t i = 0; i < mx.numel(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cov = mxy[i] - mx[i] * my[i];
    acc += value(mx[i], my[i], vx, vy, cov);
  }
  return acc / static_cast<double>(mx.numel());
}

/// Pearson correlation over all elements; nullopt when either side is
/// constant (the undefined case is skipped upstream, never NaN).
template <class S>
std::optional<double> pearson(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.numel() != b.numel())
    throw DimensionError("pearson: element counts differ");
  const std::size_t n = a.numel();
  if (n < 2) return std::nullopt;
  bool const_a = true, const_b = true;
  for (std::size_t i = 1; i < n && (const_a || const_b); ++i) {
    const_a = const_a && a[i] == a[0];
    const_b = const_b && b[i] == b[0];
  }
  if (const_a || const_b) return std::nullopt;
  double sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sa += static_cast<double>(a[i]);
    sb += static_cast<double>(b[i]);
  }
  const double ma = sa / n, mb = sb / n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = static_cast<double>(a[i]) - ma;
    const double db = static_cast<double>(b[i]) - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  if (va == 0.0 || vb == 0.0) return std::nullopt;
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

/// mean/std (population sigma) over the defined values plus the skip count.
struct Aggregate {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
  std::size_t skipped = 0;
};

/// Placeholder for a statistic with no defined entries at all: NaN moments,
/// n = 0, and the skip count explaining why. Reports render it as a gap.
inline Aggregate undefined_aggregate(std::size_t skipped) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {nan, nan, 0, skipped};
}

inline Aggregate aggregate_values(const std::vector<double>& vals, std::size_t skipped,
                                  const char* what) {
  if (vals.empty())
    throw DataError(std::string(what) + ": undefined for every entry (" +
                    std::to_string(skipped) + " skipped)");
  Aggregate out;
  out.n = vals.size();
  out.skipped = skipped;
  double s = 0.0;
  for (double v : vals) s += v;
  out.mean = s / static_cast<double>(vals.size());
  double q = 0.0;
  for (double v : vals) q += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(q / static_cast<double>(vals.size()));
  return out;
}

namespace eval_detail {

template <class S>
void require_series(const char* who, const std::vector<Tensor<S>>& p,
                    const std::vector<Tensor<S>>& t) {
  if (p.empty() || p.size() != t.size())
    throw DataError(std::string(who) + ": series sizes " + std::to_string(p.size()) + " vs " +
                    std::to_string(t.size()));
  for (std::size_t d = 0; d < p.size(); ++d) require_same_2d(who, p[d], t[d]);
  for (std::size_t d = 1; d < p.size(); ++d)
    if (!p[d].same_shape(p[0])) throw DimensionError(std::string(who) + ": ragged series");
}

template <class S>
std::pair<std::vector<double>, std::size_t> spatial_corr_values(
    const std::vector<Tensor<S>>& preds, const std::vector<Tensor<S>>& targets) {
  std::vector<double> rs;
  std::size_t skipped = 0;
  for (std::size_t d = 0; d < preds.size(); ++d) {
    if (const auto r = pearson(preds[d], targets[d]))
      rs.push_back(*r);
    else
      ++skipped;
  }
  return {std::move(rs), skipped};
}

template <class S>
std::pair<std::vector<double>, std::size_t> temporal_corr_values(
    const std::vector<Tensor<S>>& preds, const std::vector<Tensor<S>>& targets) {
  const std::size_t days = preds.size();
  const std::size_t n = preds[0].numel();
  if (days < 2) return {{}, n};
  std::vector<double> rs;
  std::size_t skipped = 0;
  Tensor<double> ps({days}), ts({days});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < days; ++d) {
      ps[d] = static_cast<double>(preds[d][i]);
      ts[d] = static_cast<double>(targets[d][i]);
    }
    if (const auto r = pearson(ps, ts))
      rs.push_back(*r);
    else
      ++skipped;
  }
  return {std::move(rs), skipped};
}

}  // namespace eval_detail

/// Per-day Pearson over the grid, summarized over days.
template <class S>
Aggregate spatial_corr_series(const std::vector<Tensor<S>>& preds,
                              const std::vector<Tensor<S>>& targets) {
  eval_detail::require_series("spatial_corr", preds, targets);
  const auto [rs, skipped] = eval_detail::spatial_corr_values(preds, targets);
  return aggregate_values(rs, skipped, "spatial_corr");
}

/// Per-gridpoint Pearson over time, summarized over space.
template <class S>
Aggregate temporal_corr_field(const std::vector<Tensor<S>>& preds,
                              const std::vector<Tensor<S>>& targets) {
  eval_detail::require_series("temporal_corr", preds, targets);
  if (preds.size() < 2) throw DataError("temporal_corr: needs at least two days");
  const auto [rs, skipped] = eval_detail::temporal_corr_values(preds, targets);
  return aggregate_values(rs, skipped, "temporal_corr");
}

/// Per-pixel mean |pred - target| over the series.
template <class S>
Tensor<S> error_map(const std::vector<Tensor<S>>& preds, const std::vector<Tensor<S>>& targets) {
  eval_detail::require_series("error_map", preds, targets);
  Tensor<double> acc(preds[0].shape());
  for (std::size_t d = 0; d < preds.size(); ++d)
    for (std::size_t i = 0; i < acc.numel(); ++i)
      acc[i] += std::abs(static_cast<double>(preds[d][i]) - static_cast<double>(targets[d][i]));
  const double inv = 1.0 / static_cast<double>(preds.size());
  Tensor<S> out(preds[0].shape());
  for (std::size_t i = 0; i < acc.numel(); ++i) out[i] = static_cast<S>(acc[i] * inv);
  return out;
}

/// Mean squared 5-point Laplacian over interior points.
template <class S>
double laplacian_energy(const Tensor<S>& f) {
  if (f.rank() != 2) throw DimensionError("laplacian_energy expects [H, W]");
  const std::size_t h = f.extent(0), w = f.extent(1);
  if (h < 3 || w < 3)
    throw DimensionError("laplacian_energy: field " + shape_str(f.shape()) + " below 3x3");
  double acc = 0.0;
  for (std::size_t i = 1; i + 1 < h; ++i)
    for (std::size_t j = 1; j + 1 < w; ++j) {
      const double l = 4.0 * static_cast<double>(f.at(i, j)) - static_cast<double>(f.at(i - 1, j)) -
                       static_cast<double>(f.at(i + 1, j)) - static_cast<double>(f.at(i, j - 1)) -
                       static_cast<double>(f.at(i, j + 1));
      acc += l * l;
    }
  return acc / static_cast<double>((h - 2) * (w - 2));
}

/// High-frequency energy of the prediction relative to the truth; ~1 when the
/// spectra match, > 1 flags gridded artifacts bleeding across variables.
template <class S>
double leakage_index(const Tensor<S>& pred, const Tensor<S>& target) {
  eval_detail::require_same_2d("leakage_index", pred, target);
  const double te = laplacian_energy(target);
  if (te == 0.0) throw DataError("leakage_index: target has zero Laplacian energy");
  return laplacian_energy(pred) / te;
}

/// Everything the report needs for one (model, variable) pair.
template <class S>
struct SeriesMetrics {
  Aggregate mse, mae, ssim, spatial_corr, temporal_corr, leakage;
  Tensor<S> err_map;
};

/// Full metric battery over one aligned test series of cropped [H, W] fields.
/// Unlike the standalone correlation functions, a statistic undefined for
/// every entry (a constant prediction, say) does not abort the battery; it is
/// reported as an undefined aggregate so degenerate models still get scored
/// on the metrics that remain meaningful.
template <class S>
SeriesMetrics<S> evaluate_series(const std::vector<Tensor<S>>& preds,
                                 const std::vector<Tensor<S>>& targets,
                                 const SsimConfig& ssim_cfg = {}) {
  eval_detail::require_series("evaluate_series", preds, targets);
  SeriesMetrics<S> out;
  std::vector<double> v_mse, v_mae, v_ssim, v_leak;
  std::size_t leak_skipped = 0;
  for (std::size_t d = 0; d < preds.size(); ++d) {
    v_mse.push_back(mse(preds[d], targets[d]));
    v_mae.push_back(mae(preds[d], targets[d]));
    v_ssim.push_back(ssim(preds[d], targets[d], ssim_cfg));
    if (laplacian_energy(targets[d]) == 0.0)
      ++leak_skipped;
    else
      v_leak.push_back(leakage_index(preds[d], targets[d]));
  }
  const auto tolerant = [](const std::vector<double>& vals, std::size_t skipped,
                           const char* what) {
    return vals.empty() ? undefined_aggregate(skipped)
                        : aggregate_values(vals, skipped, what);
  };
  out.mse = aggregate_values(v_mse, 0, "mse");
  out.mae = aggregate_values(v_mae, 0, "mae");
  out.ssim = aggregate_values(v_ssim, 0, "ssim");
  out.leakage = tolerant(v_leak, leak_skipped, "leakage");
  const auto sp = eval_detail::spatial_corr_values(preds, targets);
  out.spatial_corr = tolerant(sp.first, sp.second, "spatial_corr");
  const auto tc = eval_detail::temporal_corr_values(preds, targets);
  out.temporal_corr = tolerant(tc.first, tc.second, "temporal_corr");
  out.err_map = error_map(preds, targets);
  return out;
}

}  // namespace dscale::eval
