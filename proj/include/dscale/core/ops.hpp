#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "dscale/core/rng.hpp"
#include "dscale/core/tape.hpp"

// Differentiable dense and sequence operations. Spatial ones live in
// image_ops.hpp. Every op validates shapes up front and registers a pull
// function that routes the output gradient back to its inputs.
namespace dscale::ops {

enum class Act { none, gelu, swish };

namespace detail {

template <class S>
void require_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace detail

template <class S>
Var<S> add(Tape<S>& t, Var<S> a, Var<S> b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  detail::require_same_shape("add", av, bv);
  Tensor<S> y(av.shape());
  y.array() = av.array() + bv.array();
  const bool ng = t.needs({a, b});
  return t.emit(std::move(y), ng, [a, b](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
    tp.add_grad(a, g);
    tp.add_grad(b, g);
  });
}

template <class S>
Var<S> mul(Tape<S>& t, Var<S> a, Var<S> b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  detail::require_same_shape("mul", av, bv);
  Tensor<S> y(av.shape());
  y.array() = av.array() * bv.array();
  const bool ng = t.needs({a, b});
  return t.emit(std::move(y), ng, [a, b](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
    if (Tensor<S>* ga = tp.grad_buffer(a)) ga->array() += g.array() * tp.val(b).array();
    if (Tensor<S>* gb = tp.grad_buffer(b)) gb->array() += g.array() * tp.val(a).array();
  });
}

template <class S>
Var<S> scale(Tape<S>& t, Var<S> x, S c) {
  Tensor<S> y(t.val(x).shape());
  y.array() = t.val(x).array() * c;
  const bool ng = t.needs({x});
  return t.emit(std::move(y), ng, [x, c](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
    if (Tensor<S>* gx = tp.grad_buffer(x)) gx->array() += g.array() * c;
  });
}

template <class S>
Var<S> sum(Tape<S>& t, Var<S> x) {
  const Tensor<S>& xv = t.val(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) acc += static_cast<double>(xv[i]);
  const bool ng = t.needs({x});
  return t.emit(Tensor<S>::scalar(static_cast<S>(acc)), ng,
                [x](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  if (Tensor<S>* gx = tp.grad_buffer(x)) gx->array() += g[0];
                });
}

/// Mean of squared differences over all elements (scalar output).
template <class S>
Var<S> mean_sq_err(Tape<S>& t, Var<S> a, Var<S> b) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  detail::require_same_shape("mean_sq_err", av, bv);
  const std::size_t n = av.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    acc += d * d;
  }
  const bool ng = t.needs({a, b});
  return t.emit(Tensor<S>::scalar(static_cast<S>(acc / static_cast<double>(n))), ng,
                [a, b, n](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  const Tensor<S>& av2 = tp.val(a);
                  const Tensor<S>& bv2 = tp.val(b);
                  const S coef = static_cast<S>(2.0 / static_cast<double>(n)) * g[0];
                  Tensor<S>* ga = tp.grad_buffer(a);
                  Tensor<S>* gb = tp.grad_buffer(b);
                  for (std::size_t i = 0; i < n; ++i) {
                    const S d = coef * (av2[i] - bv2[i]);
                    if (ga) (*ga)[i] += d;
                    if (gb) (*gb)[i] -= d;
                  }
                });
}

/// y = x.W + bias, applied to the last axis; leading axes are batch.
template <class S>
Var<S> linear(Tape<S>& t, Var<S> x, Var<S> w, Var<S> b) {
  const Tensor<S>& xv = t.val(x);
  const Tensor<S>& wv = t.val(w);
  const Tensor<S>& bv = t.val(b);
  if (xv.rank() < 1 || wv.rank() != 2 || bv.rank() != 1) {
    throw DimensionError("linear: want x rank>=1, w rank 2, b rank 1; got " +
                         shape_str(xv.shape()) + " " + shape_str(wv.shape()) + " " +
                         shape_str(bv.shape()));
  }
  const std::size_t din = xv.extent(xv.rank() - 1);
  const std::size_t dout = wv.extent(1);
  if (wv.extent(0) != din || bv.extent(0) != dout) {
    throw DimensionError("linear: x " + shape_str(xv.shape()) + " incompatible with w " +
                         shape_str(wv.shape()) + ", b " + shape_str(bv.shape()));
  }
  const std::size_t rows = xv.numel() / din;
  Shape yshape = xv.shape();
  yshape.back() = dout;
  Tensor<S> y(std::move(yshape));
  {
    auto ym = y.mat(rows, dout);
    ym.noalias() = xv.mat(rows, din) * wv.mat(din, dout);
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(
                        bv.data(), static_cast<Eigen::Index>(dout))
                        .transpose();
  }
  const bool ng = t.needs({x, w, b});
  return t.emit(std::move(y), ng,
                [x, w, b, rows, din, dout](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  auto gm = g.mat(rows, dout);
                  if (Tensor<S>* gx = tp.grad_buffer(x)) {
                    gx->mat(rows, din).noalias() += gm * tp.val(w).mat(din, dout).transpose();
                  }
                  if (Tensor<S>* gw = tp.grad_buffer(w)) {
                    gw->mat(din, dout).noalias() += tp.val(x).mat(rows, din).transpose() * gm;
                  }
                  if (Tensor<S>* gb = tp.grad_buffer(b)) {
                    Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> v(
                        gb->data(), static_cast<Eigen::Index>(dout));
                    v.noalias() += gm.colwise().sum().transpose();
                  }
                });
}

/// Batched matrix product y[i] = a[i] . b[i] (or a[i] . b[i]^T).
template <class S>
Var<S> bmm(Tape<S>& t, Var<S> a, Var<S> b, bool trans_b = false) {
  const Tensor<S>& av = t.val(a);
  const Tensor<S>& bv = t.val(b);
  if (av.rank() != 3 || bv.rank() != 3 || av.extent(0) != bv.extent(0)) {
    throw DimensionError("bmm: want [B,M,K] with matching batch, got " + shape_str(av.shape()) +
                         " and " + shape_str(bv.shape()));
  }
  const std::size_t nb = av.extent(0), m = av.extent(1), k = av.extent(2);
  const std::size_t n = trans_b ? bv.extent(1) : bv.extent(2);
  const std::size_t bk = trans_b ? bv.extent(2) : bv.extent(1);
  if (bk != k) {
    throw DimensionError("bmm: inner extents differ: " + shape_str(av.shape()) + " vs " +
                         shape_str(bv.shape()) + (trans_b ? " (b transposed)" : ""));
  }
  using CM = typename Tensor<S>::ConstMatrixMap;
  using MM = typename Tensor<S>::MatrixMap;
  Tensor<S> y(Shape{nb, m, n});
  for (std::size_t i = 0; i < nb; ++i) {
    CM am(av.data() + i * m * k, m, k);
    MM ym(y.data() + i * m * n, m, n);
    if (trans_b) {
      CM bm(bv.data() + i * n * k, n, k);
      ym.noalias() = am * bm.transpose();
    } else {
      CM bm(bv.data() + i * k * n, k, n);
      ym.noalias() = am * bm;
    }
  }
  const bool ng = t.needs({a, b});
  return t.emit(
      std::move(y), ng,
      [a, b, trans_b, nb, m, k, n](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
        const Tensor<S>& av2 = tp.val(a);
        const Tensor<S>& bv2 = tp.val(b);
        Tensor<S>* ga = tp.grad_buffer(a);
        Tensor<S>* gb = tp.grad_buffer(b);
        for (std::size_t i = 0; i < nb; ++i) {
          CM gm(g.data() + i * m * n, m, n);
          CM am(av2.data() + i * m * k, m, k);
          if (trans_b) {
            CM bm(bv2.data() + i * n * k, n, k);
            if (ga) MM(ga->data() + i * m * k, m, k).noalias() += gm * bm;
            if (gb) MM(gb->data() + i * n * k, n, k).noalias() += gm.transpose() * am;
          } else {
            CM bm(bv2.data() + i * k * n, k, n);
            if (ga) MM(ga->data() + i * m * k, m, k).noalias() += gm * bm.transpose();
            if (gb) MM(gb->data() + i * k * n, k, n).noalias() += am.transpose() * gm;
          }
        }
      });
}

/// Numerically stable softmax over the last axis.
template <class S>
Var<S> softmax_lastdim(Tape<S>& t, Var<S> x) {
  const Tensor<S>& xv = t.val(x);
  if (xv.rank() < 1) throw DimensionError("softmax_lastdim: rank 0 input");
  const std::size_t k = xv.extent(xv.rank() - 1);
  const std::size_t rows = xv.numel() / k;
  Tensor<S> y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const S* xr = xv.data() + r * k;
    S* yr = y.data() + r * k;
    S mx = xr[0];
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, xr[i]);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += static_cast<double>(yr[i]);
    }
    const S inv = static_cast<S>(1.0 / sum);
    for (std::size_t i = 0; i < k; ++i) yr[i] *= inv;
  }
  const bool ng = t.needs({x});
  return t.emit(std::move(y), ng,
                [x, rows, k](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>& yv) {
                  Tensor<S>* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  for (std::size_t r = 0; r < rows; ++r) {
                    const S* yr = yv.data() + r * k;
                    const S* gr = g.data() + r * k;
                    S* out = gx->data() + r * k;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < k; ++i)
                      dot += static_cast<double>(gr[i]) * static_cast<double>(yr[i]);
                    const S d = static_cast<S>(dot);
                    for (std::size_t i = 0; i < k; ++i) out[i] += yr[i] * (gr[i] - d);
                  }
                });
}

template <class S>
Var<S> activation(Tape<S>& t, Var<S> x, Act kind) {
  if (kind == Act::none) return x;
  const Tensor<S>& xv = t.val(x);
  Tensor<S> y(xv.shape());
  const std::size_t n = xv.numel();
  if (kind == Act::gelu) {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = static_cast<double>(xv[i]);
      y[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * detail::kInvSqrt2)));
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double v = static_cast<double>(xv[i]);
      y[i] = static_cast<S>(v / (1.0 + std::exp(-v)));
    }
  }
  const bool ng = t.needs({x});
  return t.emit(std::move(y), ng,
                [x, kind, n](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  Tensor<S>* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  const Tensor<S>& xv2 = tp.val(x);
                  if (kind == Act::gelu) {
                    for (std::size_t i = 0; i < n; ++i) {
                      const double v = static_cast<double>(xv2[i]);
                      const double cdf = 0.5 * (1.0 + std::erf(v * detail::kInvSqrt2));
                      const double pdf = detail::kInvSqrt2Pi * std::exp(-0.5 * v * v);
                      (*gx)[i] += g[i] * static_cast<S>(cdf + v * pdf);
                    }
                  } else {
                    for (std::size_t i = 0; i < n; ++i) {
                      const double v = static_cast<double>(xv2[i]);
                      const double sg = 1.0 / (1.0 + std::exp(-v));
                      (*gx)[i] += g[i] * static_cast<S>(sg * (1.0 + v * (1.0 - sg)));
                    }
                  }
                });
}

/// Inverted dropout; active only when asked (training). Draws one uniform per
/// element so the stream advances the same way independent of values.
template <class S>
Var<S> dropout(Tape<S>& t, Var<S> x, double rate, Rng& rng, bool active) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!active || rate == 0.0) return x;
  const Tensor<S>& xv = t.val(x);
  Tensor<S> mask(xv.shape());
  const S keep = static_cast<S>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    mask[i] = (rng.uniform() >= rate) ? keep : S(0);
  }
  Tensor<S> y(xv.shape());
  y.array() = xv.array() * mask.array();
  const bool ng = t.needs({x});
  return t.emit(std::move(y), ng,
                [x, m = std::move(mask)](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  if (Tensor<S>* gx = tp.grad_buffer(x)) gx->array() += g.array() * m.array();
                });
}

/// Columns [off, off+len) of the last axis.
template <class S>
Var<S> slice_lastdim(Tape<S>& t, Var<S> x, std::size_t off, std::size_t len) {
  const Tensor<S>& xv = t.val(x);
  if (xv.rank() < 1) throw DimensionError("slice_lastdim: rank 0 input");
  const std::size_t k = xv.extent(xv.rank() - 1);
  if (len == 0 || off + len > k) {
    throw DimensionError("slice_lastdim: [" + std::to_string(off) + "," +
                         std::to_string(off + len) + ") out of last extent " + std::to_string(k));
  }
  const std::size_t rows = xv.numel() / k;
  Shape yshape = xv.shape();
  yshape.back() = len;
  Tensor<S> y(std::move(yshape));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(xv.data() + r * k + off, xv.data() + r * k + off + len, y.data() + r * len);
  }
  const bool ng = t.needs({x});
  return t.emit(std::move(y), ng,
                [x, off, len, rows, k](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  Tensor<S>* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  for (std::size_t r = 0; r < rows; ++r) {
                    S* dst = gx->data() + r * k + off;
                    const S* src = g.data() + r * len;
                    for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                  }
                });
}

/// [T, heads*k] -> [heads, T, k].
template <class S>
Var<S> heads_split(Tape<S>& t, Var<S> x, std::size_t heads) {
  const Tensor<S>& xv = t.val(x);
  if (xv.rank() != 2 || xv.extent(1) % heads != 0) {
    throw DimensionError("heads_split: want [T, heads*k], got " + shape_str(xv.shape()) +
                         " with heads=" + std::to_string(heads));
  }
  const std::size_t tn = xv.extent(0), k = xv.extent(1) / heads;
  Tensor<S> y(Shape{heads, tn, k});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < tn; ++i) {
      std::copy(xv.data() + i * heads * k + h * k, xv.data() + i * heads * k + (h + 1) * k,
                y.data() + (h * tn + i) * k);
    }
  }
  const bool ng = t.needs({x});
  return t.emit(std::move(y), ng,
                [x, heads, tn, k](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  Tensor<S>* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t i = 0; i < tn; ++i) {
                      S* dst = gx->data() + i * heads * k + h * k;
                      const S* src = g.data() + (h * tn + i) * k;
                      for (std::size_t j = 0; j < k; ++j) dst[j] += src[j];
                    }
                  }
                });
}

/// [heads, T, k] -> [T, heads*k].
template <class S>
Var<S> heads_merge(Tape<S>& t, Var<S> x) {
  const Tensor<S>& xv = t.val(x);
  if (xv.rank() != 3) {
    throw DimensionError("heads_merge: want [heads, T, k], got " + shape_str(xv.shape()));
  }
  const std::size_t heads = xv.extent(0), tn = xv.extent(1), k = xv.extent(2);
  Tensor<S> y(Shape{tn, heads * k});
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < tn; ++i) {
      std::copy(xv.data() + (h * tn + i) * k, xv.data() + (h * tn + i + 1) * k,
                y.data() + i * heads * k + h * k);
    }
  }
  const bool ng = t.needs({x});
  return t.emit(std::move(y), ng,
                [x, heads, tn, k](Tape<S>& tp, const Tensor<S>& g, const Tensor<S>&) {
                  Tensor<S>* gx = tp.grad_buffer(x);
                  if (!gx) return;
                  for (std::size_t h = 0; h < heads; ++h) {
                    for (std::size_t i = 0; i < tn; ++i) {
                      S* dst = gx->data() + (h * tn + i) * k;
                      const S* src = g.data() + i * heads * k + h * k;
                      for (std::size_t j = 0; j < k; ++j) dst[j] += src[j];
                    }
                  }
                });
}

}  // namespace dscale::ops
