#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "dscale/core/ops.hpp"

// Differentiable operations on [C,H,W] feature maps plus the plain-tensor
// kernels (resize, pad, crop) that data preparation reuses without a tape.
namespace dscale::ops {

enum class Pad { same, none };

namespace detail {

template <class S>
void require_chw(const char* op, const Tensor<S>& x) {
  if (x.rank() != 3) {
    throw DimensionError(std::string(op) + ": want [C,H,W], got " + shape_str(x.shape()));
  }
}

struct ConvDims {
  std::size_t c, h, w, co, kh, kw, oh, ow;
  std::ptrdiff_t py, px;
};

/// Unfold x into a (C*kh*kw) x (oh*ow) row-major patch matrix; out-of-range
/// positions are zero.
template <class S>
void im2col(const S* x, const ConvDims& d, S* col) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    const S* xc = x + c * d.h * d.w;
    for (std::size_t dy = 0; dy < d.kh; ++dy) {
      for (std::size_t dx = 0; dx < d.kw; ++dx, ++row) {
        S* out = col + row * (d.oh * d.ow);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(dx) - d.px;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + dy) - d.py;
          S* orow = out + oy * d.ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) {
            std::fill(orow, orow + d.ow, S(0));
            continue;
          }
          const S* xrow = xc + static_cast<std::size_t>(iy) * d.w;
          std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
          std::ptrdiff_t hi =
              std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(d.ow),
                                       static_cast<std::ptrdiff_t>(d.w) - shift);
          if (hi < lo) hi = lo;
          std::fill(orow, orow + lo, S(0));
          if (hi > lo) std::copy(xrow + lo + shift, xrow + hi + shift, orow + lo);
          std::fill(orow + hi, orow + d.ow, S(0));
        }
      }
    }
  }
}

/// Transpose of im2col: scatter-add patch-matrix gradients back onto the image.
template <class S>
void col2im_add(const S* col, const ConvDims& d, S* gx) {
  std::size_t row = 0;
  for (std::size_t c = 0; c < d.c; ++c) {
    S* xc = gx + c * d.h * d.w;
    for (std::size_t dy = 0; dy < d.kh; ++dy) {
      for (std::size_t dx = 0; dx < d.kw; ++dx, ++row) {
        const S* in = col + row * (d.oh * d.ow);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(dx) - d.px;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + dy) - d.py;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
          S* xrow = xc + static_cast<std::size_t>(iy) * d.w;
          const S* irow = in + oy * d.ow;
          std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
          std::ptrdiff_t hi =
              std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(d.ow),
                                       static_cast<std::ptrdiff_t>(d.w) - shift);
          for (std::ptrdiff_t ox = lo; ox < hi; ++ox) xrow[ox + shift] += irow[ox];
        }
      }
    }
  }
}

struct AxisSample {
  std::size_t i0, i1;
  double frac;
};

inline std::vector<AxisSample> resize_axis(std::size_t in, std::size_t out) {
  std::vector<AxisSample> s(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(src);
    s[o].i0 = i0;
    s[o].i1 = std::min(i0 + 1, in - 1);
    s[o].frac = src - static_cast<double>(i0);
  }
  return s;
}

}  // namespace detail

/// Cross-correlation of [C,H,W] with [Co,C,kh,kw] filters, stride 1.
/// Pad::same zero-pads (odd kernels only); Pad::none shrinks the output.
template <class S>
Var<S> conv2d(Tape<S>& t, Var<S> x, Var<S> w, Var<S> b, Pad pad) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& wv = t.val(w);
  const Tensor<S>& bv = t.val(b);
  detail::require_chw("conv2d", xv);
  if (wv.rank() != 4 || bv.rank() != 1 || bv.extent(0) != wv.extent(0) ||
      wv.extent(1) != xv.extent(0)) {
    throw DimensionError("conv2d: x " + shape_str(xv.shape()) + " incompatible with w " +
                         shape_str(wv.shape()) + ", b " + shape_str(bv.shape()));
  }
  detail::ConvDims d;
  d.c = xv.extent(0);
  d.h = xv.extent(1);
  d.w = xv.extent(2);
  d.co = wv.extent(0);
  d.kh = wv.extent(2);
  d.kw = wv.extent(3);
  if (pad == Pad::same) {
    if (d.kh % 2 == 0 || d.kw % 2 == 0) {
      throw ConfigError("conv2d: same padding needs odd kernel, got " + shape_str(wv.shape()));
    }
    d.oh = d.h;
    d.ow = d.w;
    d.py = static_cast<std::ptrdiff_t>(d.kh / 2);
    d.px = static_cast<std::ptrdiff_t>(d.kw / 2);
  } else {
    if (d.h < d.kh || d.w < d.kw) {
      throw DimensionError("conv2d: input " + shape_str(xv.shape()) + " smaller than kernel " +
                           shape_str(wv.shape()));
    }
    d.oh = d.h - d.kh + 1;
    d.ow = d.w - d.kw + 1;
    d.py = 0;
    d.px = 0;
  }
  const std::size_t krows = d.c * d.kh * d.kw;
  const std::size_t cols = d.oh * d.ow;
  Tensor<S> col(Shape{krows, cols});
  detail::im2col(xv.data(), d, col.data());
  Tensor<S> y(Shape{d.co, d.oh, d.ow});
  {
    auto ym = y.mat(d.co, cols);
    ym.noalias() = wv.mat(d.co, krows) * col.mat(krows, cols);
    for (std::size_t c = 0; c < d.co; ++c) ym.row(static_cast<Eigen::Index>(c)).array() += bv[c];
  }
  const bool ng = t.needs({x, w, b});
  return t.emit(
      std::move(y), ng, [x, w, b, d, krows, cols](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
        auto gm = g.mat(d.co, cols);
        Tensor<S>* gw = tp.grad_buffer(w);
        Tensor<S>* gx = tp.grad_buffer(x);
        if (gw) {
          Tensor<S> col(Shape{krows, cols});
          detail::im2col(tp.val(x).data(), d, col.data());
          gw->mat(d.co, krows).noalias() += gm * col.mat(krows, cols).transpose();
        }
        if (Tensor<S>* gb = tp.grad_buffer(b)) {
          for (std::size_t c = 0; c < d.co; ++c)
            (*gb)[c] += gm.row(static_cast<Eigen::Index>(c)).sum();
        }
        if (gx) {
          Tensor<S> dcol(Shape{krows, cols});
          dcol.mat(krows, cols).noalias() =
              tp.val(w).mat(d.co, krows).transpose() * gm;
          detail::col2im_add(dcol.data(), d, gx->data());
        }
      });
}

/// Bilinear interpolation with half-pixel centers, clamped at the borders.
template <class S>
Tensor<S> bilinear_resize(const Tensor<S>& x, std::size_t oh, std::size_t ow) {
  detail::require_chw("bilinear_resize", x);
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (oh == h && ow == w) return x;
  const auto ys = detail::resize_axis(h, oh);
  const auto xs = detail::resize_axis(w, ow);
  Tensor<S> y(Shape{c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const S* src = x.data() + ch * h * w;
    S* dst = y.data() + ch * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const S* r0 = src + ys[oy].i0 * w;
      const S* r1 = src + ys[oy].i1 * w;
      const S fy = static_cast<S>(ys[oy].frac);
      const S gy = S(1) - fy;
      S* out = dst + oy * ow;
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const S fx = static_cast<S>(xs[ox].frac);
        const S gx = S(1) - fx;
        out[ox] = gy * (gx * r0[xs[ox].i0] + fx * r0[xs[ox].i1]) +
                  fy * (gx * r1[xs[ox].i0] + fx * r1[xs[ox].i1]);
      }
    }
  }
  return y;
}

template <class S>
Var<S> bilinear_resize(Tape<S>& t, Var<S> x, std::size_t oh, std::size_t ow) {
  const Tensor<S>& xv = t.val(x);
  detail::require_chw("bilinear_resize", xv);
  const std::size_t c = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
  if (oh == h && ow == w) return x;
  Tensor<S> y = bilinear_resize(xv, oh, ow);
  const bool ng = t.needs({x});
  return t.emit(std::move(y), ng,
                [x, c, h, w, oh, ow](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  Tensor<S>* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  const auto ys = detail::resize_axis(h, oh);
                  const auto xs = detail::resize_axis(w, ow);
                  for (std::size_t ch = 0; ch < c; ++ch) {
                    S* dst = gx->data() + ch * h * w;
                    const S* src = g.data() + ch * oh * ow;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                      const S fy = static_cast<S>(ys[oy].frac);
                      const S gy = S(1) - fy;
                      S* r0 = dst + ys[oy].i0 * w;
                      S* r1 = dst + ys[oy].i1 * w;
                      const S* in = src + oy * ow;
                      for (std::size_t ox = 0; ox < ow; ++ox) {
                        const S fx = static_cast<S>(xs[ox].frac);
                        const S gxw = S(1) - fx;
                        r0[xs[ox].i0] += gy * gxw * in[ox];
                        r0[xs[ox].i1] += gy * fx * in[ox];
                        r1[xs[ox].i0] += fy * gxw * in[ox];
                        r1[xs[ox].i1] += fy * fx * in[ox];
                      }
                    }
                  }
                });
}

/// Pad by repeating edge values.
template <class S>
Tensor<S> replication_pad(const Tensor<S>& x, std::size_t top, std::size_t bottom,
                          std::size_t left, std::size_t right) {
  detail::require_chw("replication_pad", x);
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  const std::size_t nh = h + top + bottom, nw = w + left + right;
  Tensor<S> y(Shape{c, nh, nw});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const S* src = x.data() + ch * h * w;
    S* dst = y.data() + ch * nh * nw;
    for (std::size_t i = 0; i < nh; ++i) {
      const std::size_t sy =
          std::min(h - 1, static_cast<std::size_t>(std::max<std::ptrdiff_t>(
                              0, static_cast<std::ptrdiff_t>(i) -
                                     static_cast<std::ptrdiff_t>(top))));
      const S* srow = src + sy * w;
      S* drow = dst + i * nw;
      for (std::size_t j = 0; j < nw; ++j) {
        const std::size_t sx =
            std::min(w - 1, static_cast<std::size_t>(std::max<std::ptrdiff_t>(
                                0, static_cast<std::ptrdiff_t>(j) -
                                       static_cast<std::ptrdiff_t>(left))));
        drow[j] = srow[sx];
      }
    }
  }
  return y;
}

template <class S>
Var<S> replication_pad(Tape<S>& t, Var<S> x, std::size_t top, std::size_t bottom,
                       std::size_t left, std::size_t right) {
  const Tensor<S>& xv = t.val(x);
  if (top + bottom + left + right == 0) return x;
  Tensor<S> y = replication_pad(xv, top, bottom, left, right);
  const std::size_t c = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
  const bool ng = t.needs({x});
  return t.emit(std::move(y), ng,
                [x, c, h, w, top, left](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  Tensor<S>* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  const std::size_t nh = g.extent(1), nw = g.extent(2);
                  for (std::size_t ch = 0; ch < c; ++ch) {
                    S* dst = gx->data() + ch * h * w;
                    const S* src = g.data() + ch * nh * nw;
                    for (std::size_t i = 0; i < nh; ++i) {
                      const std::size_t sy = std::min(
                          h - 1, static_cast<std::size_t>(std::max<std::ptrdiff_t>(
                                     0, static_cast<std::ptrdiff_t>(i) -
                                            static_cast<std::ptrdiff_t>(top))));
                      for (std::size_t j = 0; j < nw; ++j) {
                        const std::size_t sx = std::min(
                            w - 1, static_cast<std::size_t>(std::max<std::ptrdiff_t>(
                                       0, static_cast<std::ptrdiff_t>(j) -
                                              static_cast<std::ptrdiff_t>(left))));
                        dst[sy * w + sx] += src[i * nw + j];
                      }
                    }
                  }
                });
}

/// Remove a border added by padding.
template <class S>
Tensor<S> crop_border(const Tensor<S>& x, std::size_t top, std::size_t bottom, std::size_t left,
                      std::size_t right) {
  detail::require_chw("crop_border", x);
  const std::size_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  if (top + bottom >= h || left + right >= w) {
    throw DimensionError("crop_border: margins exceed " + shape_str(x.shape()));
  }
  const std::size_t nh = h - top - bottom, nw = w - left - right;
  Tensor<S> y(Shape{c, nh, nw});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < nh; ++i) {
      const S* src = x.data() + (ch * h + i + top) * w + left;
      std::copy(src, src + nw, y.data() + (ch * nh + i) * nw);
    }
  }
  return y;
}

/// 2x2 average pooling, stride 2; extents must be even.
template <class S>
Var<S> avg_pool2(Tape<S>& t, Var<S> x) {
  const Tensor<S>& xv = t.val(x);
  detail::require_chw("avg_pool2", xv);
  const std::size_t c = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("avg_pool2: extents must be even, got " + shape_str(xv.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<S> y(Shape{c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const S* src = xv.data() + ch * h * w;
    S* dst = y.data() + ch * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      const S* r0 = src + 2 * i * w;
      const S* r1 = r0 + w;
      for (std::size_t j = 0; j < ow; ++j) {
        dst[i * ow + j] = (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * S(0.25);
      }
    }
  }
  const bool ng = t.needs({x});
  return t.emit(std::move(y), ng,
                [x, c, h, w, oh, ow](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  Tensor<S>* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  for (std::size_t ch = 0; ch < c; ++ch) {
                    S* dst = gx->data() + ch * h * w;
                    const S* src = g.data() + ch * oh * ow;
                    for (std::size_t i = 0; i < oh; ++i) {
                      for (std::size_t j = 0; j < ow; ++j) {
                        const S v = src[i * ow + j] * S(0.25);
                        dst[(2 * i) * w + 2 * j] += v;
                        dst[(2 * i) * w + 2 * j + 1] += v;
                        dst[(2 * i + 1) * w + 2 * j] += v;
                        dst[(2 * i + 1) * w + 2 * j + 1] += v;
                      }
                    }
                  }
                });
}

namespace detail {

/// Shared group-norm core over a conceptual [B, G, M] layout where each
/// (b, g) group is contiguous. channel_of maps a flat in-group offset to the
/// gamma/beta index.
template <class S, class ChannelOf>
Var<S> group_norm_core(Tape<S>& t, Var<S> x, Var<S> gamma, Var<S> beta, double eps,
                       std::size_t nb, std::size_t ng_, std::size_t m, ChannelOf channel_of) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& gv = t.val(gamma);
  const Tensor<S>& bv = t.val(beta);
  const std::size_t groups_total = nb * ng_;
  std::vector<double> mean(groups_total), inv(groups_total);
  Tensor<S> y(xv.shape());
  for (std::size_t gi = 0; gi < groups_total; ++gi) {
    const S* src = xv.data() + gi * m;
    double mu = 0.0;
    for (std::size_t i = 0; i < m; ++i) mu += static_cast<double>(src[i]);
    mu /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = static_cast<double>(src[i]) - mu;
      var += d * d;
    }
    var /= static_cast<double>(m);
    mean[gi] = mu;
    inv[gi] = 1.0 / std::sqrt(var + eps);
    const S muS = static_cast<S>(mu);
    const S invS = static_cast<S>(inv[gi]);
    S* dst = y.data() + gi * m;
    const std::size_t g = gi % ng_;
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t ch = channel_of(g, i);
      dst[i] = (src[i] - muS) * invS * gv[ch] + bv[ch];
    }
  }
  const bool needs = t.needs({x, gamma, beta});
  return t.emit(
      std::move(y), needs,
      [x, gamma, beta, nb, ng_, m, channel_of, mean = std::move(mean),
       inv = std::move(inv)](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
        const Tensor<S>& xv2 = tp.val(x);
        const Tensor<S>& gv2 = tp.val(gamma);
        Tensor<S>* gx = tp.grad_buffer(x);
        Tensor<S>* gg = tp.grad_buffer(gamma);
        Tensor<S>* gb = tp.grad_buffer(beta);
        std::vector<S> xhat(m), dxh(m);
        for (std::size_t gi = 0; gi < nb * ng_; ++gi) {
          const S* xs = xv2.data() + gi * m;
          const S* gs = g.data() + gi * m;
          const S muS = static_cast<S>(mean[gi]);
          const S invS = static_cast<S>(inv[gi]);
          const std::size_t grp = gi % ng_;
          double suma = 0.0, sumb = 0.0;
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t ch = channel_of(grp, i);
            xhat[i] = (xs[i] - muS) * invS;
            dxh[i] = gs[i] * gv2[ch];
            suma += static_cast<double>(dxh[i]);
            sumb += static_cast<double>(dxh[i]) * static_cast<double>(xhat[i]);
            if (gg) (*gg)[ch] += gs[i] * xhat[i];
            if (gb) (*gb)[ch] += gs[i];
          }
          if (gx) {
            const S a = static_cast<S>(suma / static_cast<double>(m));
            const S b = static_cast<S>(sumb / static_cast<double>(m));
            S* out = gx->data() + gi * m;
            for (std::size_t i = 0; i < m; ++i) {
              out[i] += invS * (dxh[i] - a - xhat[i] * b);
            }
          }
        }
      });
}

}  // namespace detail

/// Group normalization over [C,H,W]: per-group statistics across the group's
/// channels and all spatial positions, then per-channel affine.
template <class S>
Var<S> group_norm(Tape<S>& t, Var<S> x, std::size_t groups, Var<S> gamma, Var<S> beta,
                  double eps) {
  const Tensor<S>& xv = t.val(x);
  detail::require_chw("group_norm", xv);
  const std::size_t c = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
  const Tensor<S>& gv = t.val(gamma);
  if (groups == 0 || c % groups != 0) {
    throw ConfigError("group_norm: channels " + std::to_string(c) + " not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (gv.numel() != c || t.val(beta).numel() != c) {
    throw DimensionError("group_norm: affine params must have " + std::to_string(c) +
                         " entries");
  }
  const std::size_t cpg = c / groups;
  const std::size_t hw = h * w;
  auto channel_of = [cpg, hw](std::size_t g, std::size_t i) { return g * cpg + i / hw; };
  return detail::group_norm_core(t, x, gamma, beta, eps, 1, groups, cpg * hw, channel_of);
}

/// Group normalization over tokens [T,D]: per-token, per-group statistics
/// across D/groups consecutive features.
template <class S>
Var<S> group_norm_tokens(Tape<S>& t, Var<S> x, std::size_t groups, Var<S> gamma, Var<S> beta,
                         double eps) {
  const Tensor<S>& xv = t.val(x);
  if (xv.rank() != 2) {
    throw DimensionError("group_norm_tokens: want [T,D], got " + shape_str(xv.shape()));
  }
  const std::size_t tn = xv.extent(0), d = xv.extent(1);
  if (groups == 0 || d % groups != 0) {
    throw ConfigError("group_norm_tokens: width " + std::to_string(d) + " not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (t.val(gamma).numel() != d || t.val(beta).numel() != d) {
    throw DimensionError("group_norm_tokens: affine params must have " + std::to_string(d) +
                         " entries");
  }
  const std::size_t m = d / groups;
  auto channel_of = [m](std::size_t g, std::size_t i) { return g * m + i; };
  return detail::group_norm_core(t, x, gamma, beta, eps, tn, groups, m, channel_of);
}

/// Non-overlapping PxP patches of [C,H,W] -> [T, C*P*P], token-major over the
/// patch grid; within a token, channel-major then row then column.
template <class S>
Var<S> extract_patches(Tape<S>& t, Var<S> x, std::size_t p) {
  const Tensor<S>& xv = t.val(x);
  detail::require_chw("extract_patches", xv);
  const std::size_t c = xv.extent(0), h = xv.extent(1), w = xv.extent(2);
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw DimensionError("extract_patches: " + shape_str(xv.shape()) +
                         " not divisible into patches of " + std::to_string(p));
  }
  const std::size_t hp = h / p, wp = w / p, tn = hp * wp;
  Tensor<S> y(Shape{tn, c * p * p});
  for (std::size_t gy = 0; gy < hp; ++gy) {
    for (std::size_t gx = 0; gx < wp; ++gx) {
      S* dst = y.data() + (gy * wp + gx) * c * p * p;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t py = 0; py < p; ++py) {
          const S* src = xv.data() + (ch * h + gy * p + py) * w + gx * p;
          std::copy(src, src + p, dst + (ch * p + py) * p);
        }
      }
    }
  }
  const bool ng = t.needs({x});
  return t.emit(std::move(y), ng,
                [x, c, h, w, p, hp, wp](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  Tensor<S>* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  for (std::size_t gy = 0; gy < hp; ++gy) {
                    for (std::size_t gw = 0; gw < wp; ++gw) {
                      const S* src = g.data() + (gy * wp + gw) * c * p * p;
                      for (std::size_t ch = 0; ch < c; ++ch) {
                        for (std::size_t py = 0; py < p; ++py) {
                          S* dst = gx->data() + (ch * h + gy * p + py) * w + gw * p;
                          const S* srow = src + (ch * p + py) * p;
                          for (std::size_t px = 0; px < p; ++px) dst[px] += srow[px];
                        }
                      }
                    }
                  }
                });
}

/// Token sequence [T,D] -> feature map [D,Hp,Wp] with T = Hp*Wp row-major.
template <class S>
Var<S> tokens_to_grid(Tape<S>& t, Var<S> x, std::size_t hp, std::size_t wp) {
  const Tensor<S>& xv = t.val(x);
  if (xv.rank() != 2 || xv.extent(0) != hp * wp) {
    throw DimensionError("tokens_to_grid: want [" + std::to_string(hp * wp) + ",D], got " +
                         shape_str(xv.shape()));
  }
  const std::size_t tn = xv.extent(0), d = xv.extent(1);
  Tensor<S> y(Shape{d, hp, wp});
  for (std::size_t i = 0; i < tn; ++i) {
    const S* src = xv.data() + i * d;
    for (std::size_t ch = 0; ch < d; ++ch) y[ch * tn + i] = src[ch];
  }
  const bool ng = t.needs({x});
  return t.emit(std::move(y), ng,
                [x, tn, d](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  Tensor<S>* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  for (std::size_t i = 0; i < tn; ++i) {
                    S* dst = gx->data() + i * d;
                    for (std::size_t ch = 0; ch < d; ++ch) dst[ch] += g[ch * tn + i];
                  }
                });
}

/// Stack [Ci,H,W] inputs along the channel axis.
template <class S>
Var<S> concat_channels(Tape<S>& t, const std::vector<Var<S>>& xs) {
  if (xs.empty()) throw DimensionError("concat_channels: no inputs");
  std::size_t h = 0, w = 0, ctotal = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor<S>& v = t.val(xs[i]);
    detail::require_chw("concat_channels", v);
    if (i == 0) {
      h = v.extent(1);
      w = v.extent(2);
    } else if (v.extent(1) != h || v.extent(2) != w) {
      throw DimensionError("concat_channels: spatial extents differ: " +
                           shape_str(t.val(xs[0]).shape()) + " vs " + shape_str(v.shape()));
    }
    ctotal += v.extent(0);
  }
  Tensor<S> y(Shape{ctotal, h, w});
  std::size_t off = 0;
  std::vector<std::size_t> chans(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor<S>& v = t.val(xs[i]);
    chans[i] = v.extent(0);
    std::copy(v.data(), v.data() + v.numel(), y.data() + off);
    off += v.numel();
  }
  bool ng = false;
  for (Var<S> v : xs) ng = ng || t.needs({v});
  std::vector<Var<S>> ins = xs;
  return t.emit(std::move(y), ng,
                [ins, chans, h, w](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  std::size_t off2 = 0;
                  for (std::size_t i = 0; i < ins.size(); ++i) {
                    const std::size_t n = chans[i] * h * w;
                    if (Tensor<S>* gx = tp.grad_buffer(ins[i])) {
                      const S* src = g.data() + off2;
                      for (std::size_t j = 0; j < n; ++j) (*gx)[j] += src[j];
                    }
                    off2 += n;
                  }
                });
}

}  // namespace dscale::ops
