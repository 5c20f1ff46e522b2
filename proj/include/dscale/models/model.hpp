#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dscale/layers/layers.hpp"
#include "dscale/models/config.hpp"

namespace dscale {

template <class S>
struct VitDecoder {
  std::vector<layers::DecoderStage<S>> stages;
  layers::Conv2dLayer<S> head;
};

/// A built model: configuration, owned parameters, and the layer graph.
///
/// All four architectures map [C,H,W] (C = 1 or the variable count) to an
/// output of the same extents. The final convolution is zero-initialized, so
/// a freshly built model outputs exactly zero everywhere.
template <class S>
class Model {
 public:
  struct Vit {
    layers::PatchEmbed<S> embed;
    layers::PosEmbed<S> pos;
    std::vector<layers::TransformerBlock<S>> blocks;
    std::vector<VitDecoder<S>> decoders;
  };
  struct Unet {
    layers::Conv2dLayer<S> stem;
    std::vector<std::vector<layers::ResBlock<S>>> down;
    std::vector<layers::ResBlock<S>> bottleneck;
    std::vector<std::vector<layers::ResBlock<S>>> up;
    layers::Conv2dLayer<S> head;
  };

  ModelConfig config;
  layers::ParamStore<S> params;
  std::optional<Vit> vit;
  std::optional<Unet> unet;

  Var<S> forward(Tape<S>& t, Var<S> x, bool training, Rng& rng) const {
    const Tensor<S>& xv = t.val(x);
    const Shape want{static_cast<std::size_t>(config.input_channels()),
                     static_cast<std::size_t>(config.height),
                     static_cast<std::size_t>(config.width)};
    if (xv.shape() != want) {
      throw DimensionError("model forward: want input " + shape_str(want) + ", got " +
                           shape_str(xv.shape()));
    }
    return vit ? forward_vit(t, x, training, rng) : forward_unet(t, x);
  }

  /// Inference convenience: non-recording tape, dropout off.
  Tensor<S> forward_eval(const Tensor<S>& x) const {
    Tape<S> t(false);
    Rng rng(0);
    return t.val(forward(t, t.input(x), false, rng));
  }

  std::size_t param_total() const { return params.total_elements(); }

  /// Element counts grouped by top-level component (digits stripped, so
  /// "down0"/"down1" both count toward "down").
  std::map<std::string, std::size_t> param_by_component() const {
    std::map<std::string, std::size_t> out;
    for (const Parameter<S>* p : params.all()) {
      std::string head = p->name.substr(0, p->name.find('.'));
      while (!head.empty() && std::isdigit(static_cast<unsigned char>(head.back()))) {
        head.pop_back();
      }
      out[head] += p->numel();
    }
    return out;
  }

 private:
  Var<S> forward_vit(Tape<S>& t, Var<S> x, bool training, Rng& rng) const {
    const Vit& v = *vit;
    Var<S> tok = layers::forward(t, v.pos, layers::forward(t, v.embed, x));
    for (const auto& blk : v.blocks) tok = layers::forward(t, blk, tok, training, rng);
    const auto hp = static_cast<std::size_t>(config.grid_h());
    const auto wp = static_cast<std::size_t>(config.grid_w());
    std::vector<Var<S>> outs;
    outs.reserve(v.decoders.size());
    for (const auto& dec : v.decoders) {
      Var<S> g = ops::tokens_to_grid(t, tok, hp, wp);
      for (const auto& st : dec.stages) g = layers::forward(t, st, g);
      outs.push_back(layers::forward(t, dec.head, g));
    }
    return outs.size() == 1 ? outs[0] : ops::concat_channels(t, outs);
  }

  Var<S> forward_unet(Tape<S>& t, Var<S> x) const {
    const Unet& u = *unet;
    Var<S> h = layers::forward(t, u.stem, x);
    std::vector<std::vector<Var<S>>> skips(u.down.size());
    for (std::size_t s = 0; s < u.down.size(); ++s) {
      for (const auto& blk : u.down[s]) {
        h = layers::forward(t, blk, h);
        skips[s].push_back(h);
      }
      h = ops::avg_pool2(t, h);
    }
    for (const auto& blk : u.bottleneck) h = layers::forward(t, blk, h);
    for (std::size_t i = 0; i < u.up.size(); ++i) {
      const std::size_t s = u.up.size() - 1 - i;
      const Tensor<S>& hv = t.val(h);
      h = ops::bilinear_resize(t, h, 2 * hv.extent(1), 2 * hv.extent(2));
      std::vector<Var<S>> cat{h};
      for (Var<S> sk : skips[s]) cat.push_back(sk);
      h = ops::concat_channels(t, cat);
      for (const auto& blk : u.up[s]) h = layers::forward(t, blk, h);
    }
    return layers::forward(t, u.head, h);
  }
};

/// Builds and initializes a model from its configuration. Initialization
/// draws from an Rng seeded by config.seed, in registration order, so equal
/// configs give bitwise-equal parameters.
template <class S>
Model<S> build_model(const ModelConfig& cfg) {
  cfg.validate();
  Model<S> m;
  m.config = cfg;
  Rng rng(seed_mix(cfg.seed, 0x6d6f64656c));  // "model" stream

  if (cfg.is_vit()) {
    typename Model<S>::Vit v;
    const auto embed = static_cast<std::size_t>(cfg.embed_dim);
    const auto in_ch = static_cast<std::size_t>(cfg.input_channels());
    v.embed = layers::PatchEmbed<S>::make(m.params, "embed", in_ch,
                                          static_cast<std::size_t>(cfg.patch), embed, rng);
    v.pos = layers::PosEmbed<S>::make(m.params, "pos", static_cast<std::size_t>(cfg.tokens()),
                                      embed, rng);
    for (int b = 0; b < cfg.depth; ++b) {
      v.blocks.push_back(layers::TransformerBlock<S>::make(
          m.params, "encoder.block" + std::to_string(b), embed,
          static_cast<std::size_t>(cfg.heads),
          static_cast<std::size_t>(cfg.head_dim_resolved()),
          static_cast<std::size_t>(cfg.mlp_hidden), cfg.dropout, rng));
    }
    const int ups = cfg.upsample_stages();
    const bool per_var = cfg.arch == Arch::vit_1emd;
    const std::size_t n_dec = per_var ? cfg.variables.size() : 1;
    const std::size_t out_ch = per_var ? 1 : in_ch;
    for (std::size_t d = 0; d < n_dec; ++d) {
      const std::string prefix = per_var ? "decoder." + cfg.variables[d] : "decoder";
      VitDecoder<S> dec;
      std::size_t cin = embed;
      for (std::size_t i = 0; i < cfg.decoder_widths.size(); ++i) {
        const auto cout = static_cast<std::size_t>(cfg.decoder_widths[i]);
        dec.stages.push_back(layers::DecoderStage<S>::make(
            m.params, prefix + ".stage" + std::to_string(i), cin, cout,
            static_cast<int>(i) < ups, rng));
        cin = cout;
      }
      dec.head = layers::Conv2dLayer<S>::make(m.params, prefix + ".head", cin, out_ch, 3, rng,
                                              /*zero_init=*/true);
      v.decoders.push_back(std::move(dec));
    }
    m.vit = std::move(v);
  } else {
    typename Model<S>::Unet u;
    const auto n = static_cast<std::size_t>(cfg.input_channels());
    const auto& w = cfg.unet_widths;
    const int stages = cfg.unet_stages();
    u.stem = layers::Conv2dLayer<S>::make(m.params, "stem", n,
                                          static_cast<std::size_t>(w[0]), 3, rng);
    for (int s = 0; s < stages; ++s) {
      std::vector<layers::ResBlock<S>> blocks;
      for (int b = 0; b < 3; ++b) {
        const auto cin = static_cast<std::size_t>(b == 0 ? (s == 0 ? w[0] : w[s - 1]) : w[s]);
        blocks.push_back(layers::ResBlock<S>::make(
            m.params, "down" + std::to_string(s) + ".block" + std::to_string(b), cin,
            static_cast<std::size_t>(w[s]), rng));
      }
      u.down.push_back(std::move(blocks));
    }
    const auto wb = static_cast<std::size_t>(w.back());
    u.bottleneck.push_back(layers::ResBlock<S>::make(
        m.params, "bottleneck.block0", static_cast<std::size_t>(w[stages - 1]), wb, rng));
    u.bottleneck.push_back(layers::ResBlock<S>::make(m.params, "bottleneck.block1", wb, wb, rng));
    u.up.resize(static_cast<std::size_t>(stages));
    for (int s = stages - 1; s >= 0; --s) {
      const auto above = static_cast<std::size_t>(s == stages - 1 ? w.back() : w[s + 1]);
      const auto ws = static_cast<std::size_t>(w[s]);
      std::vector<layers::ResBlock<S>> blocks;
      for (int b = 0; b < 3; ++b) {
        const std::size_t cin = b == 0 ? above + 3 * ws : ws;
        blocks.push_back(layers::ResBlock<S>::make(
            m.params, "up" + std::to_string(s) + ".block" + std::to_string(b), cin, ws, rng));
      }
      u.up[static_cast<std::size_t>(s)] = std::move(blocks);
    }
    u.head = layers::Conv2dLayer<S>::make(m.params, "head", static_cast<std::size_t>(w[0]), n, 3,
                                          rng, /*zero_init=*/true);
    m.unet = std::move(u);
  }
  return m;
}

}  // namespace dscale
