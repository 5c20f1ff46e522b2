#include "doctest.h"
#include "dscale/layers/layers.hpp"
#include "support/gradcheck_layers.hpp"

using namespace dscale;
namespace ly = dscale::layers;

TEST_SUITE("layers") {

TEST_CASE("param store enforces unique names and keeps order") {
  ly::ParamStore<float> ps;
  ps.add("a.weight", {2, 3}, true);
  ps.add("a.bias", {3}, false);
  CHECK_THROWS_AS(ps.add("a.weight", {2, 3}, true), ConfigError);
  CHECK(ps.count() == 2);
  CHECK(ps.total_elements() == 9);
  CHECK(ps.all()[0]->name == "a.weight");
  CHECK(ps.all()[1]->name == "a.bias");
  CHECK(ps.find("a.bias") != nullptr);
  CHECK(ps.find("missing") == nullptr);
}

TEST_CASE("initialization conventions") {
  Rng rng(5);
  ly::ParamStore<float> ps;
  auto lin = ly::LinearLayer<float>::make(ps, "lin", 64, 32, rng);
  auto gn = ly::GroupNormLayer<float>::make(ps, "gn", 16, 8);
  auto conv = ly::Conv2dLayer<float>::make(ps, "conv", 8, 8, 3, rng);
  auto zconv = ly::Conv2dLayer<float>::make(ps, "zconv", 8, 8, 3, rng, true);

  // weights: truncated normal with stddev 0.02 -> |w| <= 0.04, not all zero
  float max_abs = 0.0f;
  double sumsq = 0.0;
  for (std::size_t i = 0; i < lin.weight->numel(); ++i) {
    max_abs = std::max(max_abs, std::abs(lin.weight->value[i]));
    sumsq += lin.weight->value[i] * lin.weight->value[i];
  }
  CHECK(max_abs <= 0.04f);
  CHECK(max_abs > 0.0f);
  const double stddev = std::sqrt(sumsq / lin.weight->numel());
  CHECK(stddev > 0.01);
  CHECK(stddev < 0.03);

  for (std::size_t i = 0; i < lin.bias->numel(); ++i) CHECK(lin.bias->value[i] == 0.0f);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(gn.gamma->value[i] == 1.0f);
    CHECK(gn.beta->value[i] == 0.0f);
  }
  CHECK(gn.groups == 2);
  for (std::size_t i = 0; i < zconv.weight->numel(); ++i) CHECK(zconv.weight->value[i] == 0.0f);
  CHECK(conv.weight->value[0] != 0.0f);

  // decay flags: weights yes, biases and norm affine no
  CHECK(lin.weight->decay);
  CHECK(!lin.bias->decay);
  CHECK(!gn.gamma->decay);
  CHECK(!gn.beta->decay);

  CHECK_THROWS_AS(ly::GroupNormLayer<float>::make(ps, "bad", 12, 8), ConfigError);
}

TEST_CASE("attention forward shape and dropout switching") {
  Rng rng(11);
  ly::ParamStore<double> ps;
  auto attn = ly::Attention<double>::make(ps, "attn", 16, 2, 16, 0.5, rng);
  CHECK(attn.qkv.weight->value.shape() == Shape{16, 96});
  CHECK(attn.out.weight->value.shape() == Shape{32, 16});

  Tensor<double> x(Shape{5, 16});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1, 1);

  // inference is deterministic and ignores the dropout stream
  Tape<double> t1(false);
  Rng d1(1);
  auto y1 = t1.val(forward(t1, attn, t1.input(x), false, d1));
  Tape<double> t2(false);
  Rng d2(999);
  auto y2 = t2.val(forward(t2, attn, t2.input(x), false, d2));
  REQUIRE(y1.shape() == Shape{5, 16});
  for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);

  // training with the same mask stream reproduces; different streams diverge
  Tape<double> t3(false);
  Rng d3(42);
  auto y3 = t3.val(forward(t3, attn, t3.input(x), true, d3));
  Tape<double> t4(false);
  Rng d4(42);
  auto y4 = t4.val(forward(t4, attn, t4.input(x), true, d4));
  bool same = true, same_as_eval = true;
  for (std::size_t i = 0; i < y3.numel(); ++i) {
    same = same && y3[i] == y4[i];
    same_as_eval = same_as_eval && y3[i] == y1[i];
  }
  CHECK(same);
  CHECK(!same_as_eval);
}

TEST_CASE("transformer block reduces to identity when projections are zero") {
  Rng rng(3);
  ly::ParamStore<double> ps;
  auto blk = ly::TransformerBlock<double>::make(ps, "blk", 16, 2, 8, 12, 0.0, rng);
  for (auto* p : ps.all()) {
    if (p->name.find("gamma") == std::string::npos) p->value.set_zero();
  }
  Tensor<double> x(Shape{6, 16});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-2, 2);
  Tape<double> t(false);
  Rng drop(0);
  auto y = t.val(forward(t, blk, t.input(x), false, drop));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("residual block is identity with zeroed second conv") {
  Rng rng(7);
  ly::ParamStore<double> ps;
  auto blk = ly::ResBlock<double>::make(ps, "res", 8, 8, rng);
  CHECK(!blk.shortcut.has_value());
  blk.conv2.weight->value.set_zero();
  blk.conv2.bias->value.set_zero();
  Tensor<double> x(Shape{8, 4, 4});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-2, 2);
  Tape<double> t(false);
  auto y = t.val(forward(t, blk, t.input(x)));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);

  auto wide = ly::ResBlock<double>::make(ps, "wide", 8, 16, rng);
  CHECK(wide.shortcut.has_value());
  auto yw = t.val(forward(t, wide, t.input(x)));
  CHECK(yw.shape() == Shape{16, 4, 4});
}

TEST_CASE("decoder stage doubles spatial extents when upsampling") {
  Rng rng(9);
  ly::ParamStore<double> ps;
  auto up = ly::DecoderStage<double>::make(ps, "up", 8, 8, true, rng);
  auto flat = ly::DecoderStage<double>::make(ps, "flat", 8, 8, false, rng);
  Tensor<double> x(Shape{8, 3, 5});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1, 1);
  Tape<double> t(false);
  CHECK(t.val(forward(t, up, t.input(x))).shape() == Shape{8, 6, 10});
  CHECK(t.val(forward(t, flat, t.input(x))).shape() == Shape{8, 3, 5});
}

TEST_CASE("patch embed and positional table compose") {
  Rng rng(13);
  ly::ParamStore<double> ps;
  auto pe = ly::PatchEmbed<double>::make(ps, "embed", 2, 2, 8, rng);
  auto pos = ly::PosEmbed<double>::make(ps, "pos", 4, 8, rng);
  CHECK(pe.proj.weight->value.shape() == Shape{8, 8});
  CHECK(pos.table->value.shape() == Shape{4, 8});
  Tensor<double> x(Shape{2, 4, 4});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(-1, 1);
  Tape<double> t(false);
  auto tok = forward(t, pe, t.input(x));
  CHECK(t.val(tok).shape() == Shape{4, 8});
  auto with_pos = t.val(forward(t, pos, tok));
  CHECK(with_pos.shape() == Shape{4, 8});
}

TEST_CASE("composite layer gradients match central differences") {
  for (const auto& c : gradtest::layer_grad_cases()) {
    CAPTURE(c.name);
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
      const auto rep = c.run(seed);
      CAPTURE(seed);
      CHECK(rep.checked > 0);
      CHECK(rep.max_err < 1e-4);
    }
  }
}

}  // TEST_SUITE
