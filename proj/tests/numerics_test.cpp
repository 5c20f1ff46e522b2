#include <cmath>
#include <vector>

#include "doctest.h"
#include "dscale/core/image_ops.hpp"
#include "dscale/core/ops.hpp"
#include "dscale/core/rng.hpp"

using namespace dscale;
namespace op = dscale::ops;

namespace {

template <class S>
Tensor<S> make(Shape shape, std::vector<S> v) {
  return Tensor<S>(std::move(shape), std::move(v));
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("tensor shape accounting") {
  Tensor<double> t(Shape{2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK(t.extent(1) == 3);
  CHECK(t.allocated());
  t.at(1, 2, 3) = 7.0;
  CHECK(t[23] == 7.0);

  Tensor<double> s = Tensor<double>::scalar(5.0);
  CHECK(s.rank() == 0);
  CHECK(s.numel() == 1);

  Tensor<double> unset;
  CHECK(!unset.allocated());

  CHECK_THROWS_AS(Tensor<double>(Shape{2, 0}), DimensionError);
  CHECK_THROWS_AS(make<double>({2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), DimensionError);
  CHECK(t.reshaped({4, 6}).extent(0) == 4);
}

TEST_CASE("rng streams are reproducible and in range") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  Rng c(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(std::abs(c.trunc_normal()) <= 2.0);
  }
  Rng d(7);
  for (int i = 0; i < 100; ++i) CHECK(d.below(13) < 13);

  // distinct streams from the same base seed
  CHECK(seed_mix(1, 0) != seed_mix(1, 1));
  CHECK(seed_mix(1, 0) != seed_mix(2, 0));
}

TEST_CASE("linear matches closed form") {
  Tape<double> t;
  auto x = t.input(make<double>({1, 2}, {1.0, 1.0}));
  auto w = t.input(make<double>({2, 1}, {2.0, 3.0}));
  auto b = t.input(make<double>({1}, {0.5}));
  auto y = op::linear(t, x, w, b);
  CHECK(t.val(y)[0] == doctest::Approx(5.5).epsilon(1e-12));

  auto bad = t.input(make<double>({3}, {0.0, 0.0, 0.0}));
  CHECK_THROWS_AS(op::linear(t, x, w, bad), DimensionError);
}

TEST_CASE("conv2d same-padding on a constant field") {
  // all-ones 5x5 input, all-ones 3x3 kernel: corners see 4, edges 6, interior 9
  Tape<double> t;
  auto x = t.input(Tensor<double>::full({1, 5, 5}, 1.0));
  auto w = t.input(Tensor<double>::full({1, 1, 3, 3}, 1.0));
  auto b = t.input(Tensor<double>::zeros({1}));
  auto y = op::conv2d(t, x, w, b, op::Pad::same);
  const Tensor<double>& v = t.val(y);
  REQUIRE(v.shape() == Shape{1, 5, 5});
  CHECK(v.at(0, 0, 0) == doctest::Approx(4.0));
  CHECK(v.at(0, 0, 2) == doctest::Approx(6.0));
  CHECK(v.at(0, 2, 2) == doctest::Approx(9.0));
  CHECK(v.at(0, 4, 4) == doctest::Approx(4.0));

  auto yv = op::conv2d(t, x, w, b, op::Pad::none);
  REQUIRE(t.val(yv).shape() == Shape{1, 3, 3});
  CHECK(t.val(yv).at(0, 1, 1) == doctest::Approx(9.0));
}

TEST_CASE("conv2d rejects even kernels for same padding") {
  Tape<double> t;
  auto x = t.input(Tensor<double>::zeros({1, 4, 4}));
  auto w = t.input(Tensor<double>::zeros({1, 1, 2, 2}));
  auto b = t.input(Tensor<double>::zeros({1}));
  CHECK_THROWS_AS(op::conv2d(t, x, w, b, op::Pad::same), ConfigError);
  CHECK_NOTHROW(op::conv2d(t, x, w, b, op::Pad::none));
}

TEST_CASE("bilinear resize uses half-pixel centers") {
  // row [0,1] widened to 4 -> [0, 0.25, 0.75, 1]
  Tensor<double> x = make<double>({1, 1, 2}, {0.0, 1.0});
  Tensor<double> y = op::bilinear_resize(x, 1, 4);
  CHECK(y[0] == doctest::Approx(0.0));
  CHECK(y[1] == doctest::Approx(0.25));
  CHECK(y[2] == doctest::Approx(0.75));
  CHECK(y[3] == doctest::Approx(1.0));
}

TEST_CASE("bilinear resize to identical extents is bitwise identity") {
  Rng rng(3);
  Tensor<float> x(Shape{2, 5, 7});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.uniform(-4, 4));
  Tensor<float> y = op::bilinear_resize(x, 5, 7);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x[i] == y[i]);
}

TEST_CASE("bilinear resize is linear in its input") {
  Rng rng(11);
  Tensor<double> a(Shape{1, 4, 5}), b(Shape{1, 4, 5});
  for (std::size_t i = 0; i < a.numel(); ++i) {
    a[i] = rng.uniform(-1, 1);
    b[i] = rng.uniform(-1, 1);
  }
  const double al = 0.7, be = -1.3;
  Tensor<double> mixed(a.shape());
  mixed.array() = al * a.array() + be * b.array();
  Tensor<double> lhs = op::bilinear_resize(mixed, 9, 3);
  Tensor<double> ra = op::bilinear_resize(a, 9, 3);
  Tensor<double> rb = op::bilinear_resize(b, 9, 3);
  for (std::size_t i = 0; i < lhs.numel(); ++i) {
    CHECK(lhs[i] == doctest::Approx(al * ra[i] + be * rb[i]).epsilon(1e-12));
  }
}

TEST_CASE("replication pad repeats the edge") {
  Tensor<double> x = Tensor<double>::full({1, 1, 1}, 5.0);
  Tensor<double> y = op::replication_pad(x, 1, 1, 1, 1);
  REQUIRE(y.shape() == Shape{1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) CHECK(y[i] == 5.0);

  Tensor<double> z = make<double>({1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> p = op::replication_pad(z, 0, 1, 0, 2);
  REQUIRE(p.shape() == Shape{1, 3, 4});
  // bottom-right corner extends the last value
  CHECK(p.at(0, 2, 3) == 4.0);
  CHECK(p.at(0, 2, 0) == 3.0);
  CHECK(p.at(0, 0, 3) == 2.0);

  Tensor<double> back = op::crop_border(p, 0, 1, 0, 2);
  REQUIRE(back.shape() == z.shape());
  for (std::size_t i = 0; i < 4; ++i) CHECK(back[i] == z[i]);
}

TEST_CASE("group norm standardizes within a group") {
  // two points with mean 0 and population variance 1 stay put (eps -> 0)
  Tape<double> t;
  auto x = t.input(make<double>({1, 1, 2}, {-1.0, 1.0}));
  auto gamma = t.input(Tensor<double>::full({1}, 1.0));
  auto beta = t.input(Tensor<double>::zeros({1}));
  auto y = op::group_norm(t, x, 1, gamma, beta, 1e-12);
  CHECK(t.val(y)[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(t.val(y)[1] == doctest::Approx(1.0).epsilon(1e-9));

  CHECK_THROWS_AS(op::group_norm(t, x, 3, gamma, beta, 1e-12), ConfigError);
}

TEST_CASE("group norm output has zero mean and unit variance per group") {
  Rng rng(5);
  const std::size_t C = 6, H = 3, W = 4, groups = 3;
  Tape<double> t;
  Tensor<double> xv(Shape{C, H, W});
  for (std::size_t i = 0; i < xv.numel(); ++i) xv[i] = rng.uniform(-5, 5);
  auto y = op::group_norm(t, t.input(xv), groups, t.input(Tensor<double>::full({C}, 1.0)),
                          t.input(Tensor<double>::zeros({C})), 1e-10);
  const Tensor<double>& v = t.val(y);
  const std::size_t m = (C / groups) * H * W;
  for (std::size_t g = 0; g < groups; ++g) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < m; ++i) mu += v[g * m + i];
    mu /= m;
    for (std::size_t i = 0; i < m; ++i) var += (v[g * m + i] - mu) * (v[g * m + i] - mu);
    var /= m;
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax matches closed form and normalizes") {
  Tape<double> t;
  auto x = t.input(make<double>({1, 2}, {0.0, std::log(3.0)}));
  auto y = op::softmax_lastdim(t, x);
  CHECK(t.val(y)[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(t.val(y)[1] == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(9);
  Tensor<double> big(Shape{7, 11});
  for (std::size_t i = 0; i < big.numel(); ++i) big[i] = rng.uniform(-30, 30);
  auto s = op::softmax_lastdim(t, t.input(big));
  for (std::size_t r = 0; r < 7; ++r) {
    double total = 0;
    for (std::size_t i = 0; i < 11; ++i) {
      const double p = t.val(s).at(r, i);
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
      total += p;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("activations match reference values") {
  Tape<double> t;
  auto x = t.input(make<double>({3}, {0.0, 1.0, 10.0}));
  auto g = op::activation(t, x, op::Act::gelu);
  CHECK(t.val(g)[0] == doctest::Approx(0.0));
  CHECK(t.val(g)[2] == doctest::Approx(10.0).epsilon(1e-9));
  auto s = op::activation(t, x, op::Act::swish);
  CHECK(t.val(s)[1] == doctest::Approx(0.7310585786300049).epsilon(1e-12));
  auto n = op::activation(t, x, op::Act::none);
  CHECK(n.id == x.id);
}

TEST_CASE("avg pool averages 2x2 blocks") {
  Tape<double> t;
  auto x = t.input(make<double>({1, 2, 2}, {0, 2, 4, 6}));
  auto y = op::avg_pool2(t, x);
  REQUIRE(t.val(y).shape() == Shape{1, 1, 1});
  CHECK(t.val(y)[0] == doctest::Approx(3.0));

  auto odd = t.input(Tensor<double>::zeros({1, 3, 4}));
  CHECK_THROWS_AS(op::avg_pool2(t, odd), DimensionError);
}

TEST_CASE("mean squared error value and gradient") {
  Tape<double> t;
  Parameter<double> a("a", {1});
  a.value[0] = 3.0;
  auto av = t.param(a);
  auto bv = t.input(make<double>({1}, {1.0}));
  auto l = op::mean_sq_err(t, av, bv);
  CHECK(t.val(l)[0] == doctest::Approx(4.0));
  t.backward(l);
  CHECK(a.grad[0] == doctest::Approx(4.0));  // 2*(3-1)

  Tape<double> t2;
  auto p = t2.input(make<double>({2}, {0.0, 1.0}));
  auto q = t2.input(make<double>({2}, {1.0, 1.0}));
  CHECK(t2.val(op::mean_sq_err(t2, p, q))[0] == doctest::Approx(0.5));
}

TEST_CASE("extract_patches layout is channel-major, then row, then column") {
  Tensor<double> x(Shape{2, 4, 4});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<double>(i);
  Tape<double> t;
  auto y = t.val(op::extract_patches(t, t.input(x), 2));
  REQUIRE(y.shape() == Shape{4, 8});
  // token 0 = patch at (0,0): channel 0 rows {0,1},{4,5}; channel 1 offsets +16
  const std::vector<double> tok0 = {0, 1, 4, 5, 16, 17, 20, 21};
  const std::vector<double> tok1 = {2, 3, 6, 7, 18, 19, 22, 23};
  const std::vector<double> tok2 = {8, 9, 12, 13, 24, 25, 28, 29};
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(y.at(0, i) == tok0[i]);
    CHECK(y.at(1, i) == tok1[i]);
    CHECK(y.at(2, i) == tok2[i]);
  }
}

TEST_CASE("tokens_to_grid transposes tokens into a feature map") {
  Tensor<double> x(Shape{6, 3});
  for (std::size_t tk = 0; tk < 6; ++tk)
    for (std::size_t d = 0; d < 3; ++d) x.at(tk, d) = 10.0 * d + tk;
  Tape<double> t;
  auto y = t.val(op::tokens_to_grid(t, t.input(x), 2, 3));
  REQUIRE(y.shape() == Shape{3, 2, 3});
  for (std::size_t d = 0; d < 3; ++d)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 3; ++j) CHECK(y.at(d, i, j) == 10.0 * d + (i * 3 + j));
}

TEST_CASE("heads split keeps per-head columns together") {
  Tensor<double> x(Shape{2, 6});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = static_cast<double>(i);
  Tape<double> t;
  auto split = op::heads_split(t, t.input(x), 3);
  const Tensor<double>& s = t.val(split);
  REQUIRE(s.shape() == Shape{3, 2, 2});
  CHECK(s.at(0, 0, 0) == 0.0);
  CHECK(s.at(0, 1, 1) == 7.0);
  CHECK(s.at(2, 0, 0) == 4.0);
  CHECK(s.at(2, 1, 1) == 11.0);
  auto merged = t.val(op::heads_merge(t, split));
  REQUIRE(merged.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(merged[i] == x[i]);
}

TEST_CASE("slice and concat round values through") {
  Tape<double> t;
  Tensor<double> x(Shape{2, 5});
  for (std::size_t i = 0; i < 10; ++i) x[i] = static_cast<double>(i);
  auto sl = t.val(op::slice_lastdim(t, t.input(x), 1, 3));
  REQUIRE(sl.shape() == Shape{2, 3});
  CHECK(sl.at(0, 0) == 1.0);
  CHECK(sl.at(1, 2) == 8.0);

  auto a = t.input(Tensor<double>::full({1, 2, 2}, 1.0));
  auto b = t.input(Tensor<double>::full({2, 2, 2}, 2.0));
  auto cat = t.val(op::concat_channels(t, {a, b}));
  REQUIRE(cat.shape() == Shape{3, 2, 2});
  CHECK(cat[0] == 1.0);
  CHECK(cat[4] == 2.0);
  CHECK(cat[11] == 2.0);
}

TEST_CASE("bmm agrees with direct matrix multiply") {
  Rng rng(17);
  Tensor<double> a(Shape{2, 3, 4}), b(Shape{2, 4, 5});
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform(-1, 1);
  for (std::size_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform(-1, 1);
  Tape<double> t;
  auto y = t.val(op::bmm(t, t.input(a), t.input(b), false));
  for (std::size_t nb = 0; nb < 2; ++nb)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double acc = 0;
        for (std::size_t k = 0; k < 4; ++k) acc += a.at(nb, i, k) * b.at(nb, k, j);
        CHECK(y.at(nb, i, j) == doctest::Approx(acc).epsilon(1e-12));
      }

  // transposed variant consumes [B,N,K]
  Tensor<double> bt(Shape{2, 5, 4});
  for (std::size_t i = 0; i < bt.numel(); ++i) bt[i] = rng.uniform(-1, 1);
  auto yt = t.val(op::bmm(t, t.input(a), t.input(bt), true));
  for (std::size_t nb = 0; nb < 2; ++nb)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double acc = 0;
        for (std::size_t k = 0; k < 4; ++k) acc += a.at(nb, i, k) * bt.at(nb, j, k);
        CHECK(yt.at(nb, i, j) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("dropout scales kept values and is inert when inactive") {
  Tape<double> t;
  Tensor<double> x = Tensor<double>::full({100}, 1.0);
  Rng rng(23);
  auto y = op::dropout(t, t.input(x), 0.5, rng, true);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const double v = t.val(y)[i];
    CHECK((v == 0.0 || v == doctest::Approx(2.0)));
    if (v != 0.0) ++kept;
  }
  CHECK(kept > 20);
  CHECK(kept < 80);

  Rng rng2(23);
  auto same = op::dropout(t, t.input(x), 0.0, rng2, true);
  CHECK(t.val(same)[0] == 1.0);
  auto inert = op::dropout(t, t.input(x), 0.5, rng2, false);
  CHECK(t.val(inert)[7] == 1.0);
  CHECK_THROWS_AS(op::dropout(t, t.input(x), 1.0, rng2, true), ConfigError);
}

TEST_CASE("tape backward accumulates and rejects non-scalar losses") {
  Parameter<double> p("p", {2});
  p.value[0] = 1.0;
  p.value[1] = 2.0;

  Tape<double> t;
  auto v = t.param(p);
  auto l = op::sum(t, op::mul(t, v, v));  // sum of squares
  t.backward(l);
  CHECK(p.grad[0] == doctest::Approx(2.0));
  CHECK(p.grad[1] == doctest::Approx(4.0));
  t.backward(l);  // second pass accumulates
  CHECK(p.grad[0] == doctest::Approx(4.0));
  CHECK(p.grad[1] == doctest::Approx(8.0));

  CHECK_THROWS_AS(t.backward(v), DimensionError);

  // watching the same parameter twice reuses the node
  Tape<double> t2;
  auto a1 = t2.param(p);
  auto a2 = t2.param(p);
  CHECK(a1.id == a2.id);

  // a non-recording tape never tracks gradients
  Tape<double> t3(false);
  auto e = t3.param(p);
  auto l3 = op::sum(t3, e);
  CHECK_THROWS_AS(t3.backward(l3), ConfigError);
}

}  // TEST_SUITE
