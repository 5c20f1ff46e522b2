#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dscale/core/image_ops.hpp"
#include "dscale/core/ops.hpp"
#include "dscale/core/rng.hpp"

// Model building blocks. Each layer struct holds non-owning pointers to
// parameters registered in a ParamStore under a path-style prefix; forward()
// overloads run the layer on a tape.
namespace dscale::layers {

using ops::Act;
using ops::Pad;

/// Owns every parameter of a model in registration order.
template <class S>
class ParamStore {
 public:
  Parameter<S>& add(const std::string& name, Shape shape, bool decay) {
    if (by_name_.count(name)) {
      throw ConfigError("parameter name registered twice: " + name);
    }
    items_.push_back(std::make_unique<Parameter<S>>(name, std::move(shape), decay));
    by_name_.emplace(name, items_.back().get());
    return *items_.back();
  }

  Parameter<S>* find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  std::vector<Parameter<S>*> all() const {
    std::vector<Parameter<S>*> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.push_back(p.get());
    return out;
  }

  std::size_t count() const { return items_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p->numel();
    return n;
  }

  void zero_grads() {
    for (const auto& p : items_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter<S>>> items_;
  std::unordered_map<std::string, Parameter<S>*> by_name_;
};

namespace init {

/// Truncated normal (|z| <= 2 sigma), the default for weights.
template <class S>
void trunc_normal(Tensor<S>& t, Rng& rng, double stddev = 0.02) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    t[i] = static_cast<S>(stddev * rng.trunc_normal());
  }
}

}  // namespace init

template <class S>
struct LinearLayer {
  Parameter<S>* weight = nullptr;
  Parameter<S>* bias = nullptr;

  static LinearLayer make(ParamStore<S>& ps, const std::string& prefix, std::size_t din,
                          std::size_t dout, Rng& rng) {
    LinearLayer l;
    l.weight = &ps.add(prefix + ".weight", {din, dout}, true);
    init::trunc_normal(l.weight->value, rng);
    l.bias = &ps.add(prefix + ".bias", {dout}, false);
    return l;
  }
};

template <class S>
Var<S> forward(Tape<S>& t, const LinearLayer<S>& l, Var<S> x) {
  return ops::linear(t, x, t.param(*l.weight), t.param(*l.bias));
}

template <class S>
struct Conv2dLayer {
  Parameter<S>* weight = nullptr;
  Parameter<S>* bias = nullptr;
  Pad pad = Pad::same;

  static Conv2dLayer make(ParamStore<S>& ps, const std::string& prefix, std::size_t cin,
                          std::size_t cout, std::size_t k, Rng& rng, bool zero_init = false) {
    Conv2dLayer l;
    l.weight = &ps.add(prefix + ".weight", {cout, cin, k, k}, true);
    if (!zero_init) init::trunc_normal(l.weight->value, rng);
    l.bias = &ps.add(prefix + ".bias", {cout}, false);
    return l;
  }
};

template <class S>
Var<S> forward(Tape<S>& t, const Conv2dLayer<S>& l, Var<S> x) {
  return ops::conv2d(t, x, t.param(*l.weight), t.param(*l.bias), l.pad);
}

/// Group normalization with a fixed number of channels per group.
template <class S>
struct GroupNormLayer {
  Parameter<S>* gamma = nullptr;
  Parameter<S>* beta = nullptr;
  std::size_t groups = 1;
  double eps = 1e-5;

  static GroupNormLayer make(ParamStore<S>& ps, const std::string& prefix, std::size_t channels,
                             std::size_t group_size = 8) {
    if (group_size == 0 || channels % group_size != 0) {
      throw ConfigError("group norm: width " + std::to_string(channels) +
                        " is not a multiple of group size " + std::to_string(group_size));
    }
    GroupNormLayer l;
    l.groups = channels / group_size;
    l.gamma = &ps.add(prefix + ".gamma", {channels}, false);
    l.gamma->value.fill(S(1));
    l.beta = &ps.add(prefix + ".beta", {channels}, false);
    return l;
  }
};

template <class S>
Var<S> forward(Tape<S>& t, const GroupNormLayer<S>& l, Var<S> x) {
  if (t.val(x).rank() == 2) {
    return ops::group_norm_tokens(t, x, l.groups, t.param(*l.gamma), t.param(*l.beta), l.eps);
  }
  return ops::group_norm(t, x, l.groups, t.param(*l.gamma), t.param(*l.beta), l.eps);
}

/// Non-overlapping patches projected to the embedding width.
template <class S>
struct PatchEmbed {
  std::size_t patch = 8;
  LinearLayer<S> proj;

  static PatchEmbed make(ParamStore<S>& ps, const std::string& prefix, std::size_t in_ch,
                         std::size_t patch, std::size_t embed, Rng& rng) {
    PatchEmbed l;
    l.patch = patch;
    l.proj = LinearLayer<S>::make(ps, prefix + ".proj", in_ch * patch * patch, embed, rng);
    return l;
  }
};

template <class S>
Var<S> forward(Tape<S>& t, const PatchEmbed<S>& l, Var<S> x) {
  return forward(t, l.proj, ops::extract_patches(t, x, l.patch));
}

/// Learned additive positional table, one row per token.
template <class S>
struct PosEmbed {
  Parameter<S>* table = nullptr;

  static PosEmbed make(ParamStore<S>& ps, const std::string& prefix, std::size_t tokens,
                       std::size_t embed, Rng& rng) {
    PosEmbed l;
    l.table = &ps.add(prefix + ".table", {tokens, embed}, true);
    init::trunc_normal(l.table->value, rng);
    return l;
  }
};

template <class S>
Var<S> forward(Tape<S>& t, const PosEmbed<S>& l, Var<S> x) {
  return ops::add(t, x, t.param(*l.table));
}

/// Multi-head self-attention with a fused qkv projection. Dropout acts on the
/// attention probabilities only.
template <class S>
struct Attention {
  LinearLayer<S> qkv;
  LinearLayer<S> out;
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  double dropout_rate = 0.0;

  static Attention make(ParamStore<S>& ps, const std::string& prefix, std::size_t embed,
                        std::size_t heads, std::size_t head_dim, double dropout_rate, Rng& rng) {
    Attention l;
    l.heads = heads;
    l.head_dim = head_dim;
    l.dropout_rate = dropout_rate;
    l.qkv = LinearLayer<S>::make(ps, prefix + ".qkv", embed, 3 * heads * head_dim, rng);
    l.out = LinearLayer<S>::make(ps, prefix + ".out", heads * head_dim, embed, rng);
    return l;
  }
};

template <class S>
Var<S> forward(Tape<S>& t, const Attention<S>& l, Var<S> x, bool training, Rng& rng) {
  const std::size_t hk = l.heads * l.head_dim;
  Var<S> qkv = forward(t, l.qkv, x);
  Var<S> q = ops::heads_split(t, ops::slice_lastdim(t, qkv, 0, hk), l.heads);
  Var<S> k = ops::heads_split(t, ops::slice_lastdim(t, qkv, hk, hk), l.heads);
  Var<S> v = ops::heads_split(t, ops::slice_lastdim(t, qkv, 2 * hk, hk), l.heads);
  Var<S> scores =
      ops::scale(t, ops::bmm(t, q, k, true),
                 static_cast<S>(1.0 / std::sqrt(static_cast<double>(l.head_dim))));
  Var<S> probs = ops::softmax_lastdim(t, scores);
  probs = ops::dropout(t, probs, l.dropout_rate, rng, training);
  return forward(t, l.out, ops::heads_merge(t, ops::bmm(t, probs, v, false)));
}

/// Pre-norm transformer encoder block: attention then a two-layer MLP, each
/// behind a token-wise group norm with a residual connection.
template <class S>
struct TransformerBlock {
  GroupNormLayer<S> norm1, norm2;
  Attention<S> attn;
  LinearLayer<S> fc1, fc2;

  static TransformerBlock make(ParamStore<S>& ps, const std::string& prefix, std::size_t embed,
                               std::size_t heads, std::size_t head_dim, std::size_t mlp_hidden,
                               double dropout_rate, Rng& rng, std::size_t group_size = 8) {
    TransformerBlock l;
    l.norm1 = GroupNormLayer<S>::make(ps, prefix + ".norm1", embed, group_size);
    l.attn = Attention<S>::make(ps, prefix + ".attn", embed, heads, head_dim, dropout_rate, rng);
    l.norm2 = GroupNormLayer<S>::make(ps, prefix + ".norm2", embed, group_size);
    l.fc1 = LinearLayer<S>::make(ps, prefix + ".fc1", embed, mlp_hidden, rng);
    l.fc2 = LinearLayer<S>::make(ps, prefix + ".fc2", mlp_hidden, embed, rng);
    return l;
  }
};

template <class S>
Var<S> forward(Tape<S>& t, const TransformerBlock<S>& l, Var<S> x, bool training, Rng& rng) {
  Var<S> h = ops::add(t, x, forward(t, l.attn, forward(t, l.norm1, x), training, rng));
  Var<S> m = forward(t, l.fc1, forward(t, l.norm2, h));
  m = forward(t, l.fc2, ops::activation(t, m, Act::gelu));
  return ops::add(t, h, m);
}

/// Norm -> 3x3 conv -> swish -> 3x3 conv, plus an identity or 1x1 shortcut.
template <class S>
struct ResBlock {
  GroupNormLayer<S> norm;
  Conv2dLayer<S> conv1, conv2;
  std::optional<Conv2dLayer<S>> shortcut;

  static ResBlock make(ParamStore<S>& ps, const std::string& prefix, std::size_t cin,
                       std::size_t cout, Rng& rng, std::size_t group_size = 8) {
    ResBlock l;
    l.norm = GroupNormLayer<S>::make(ps, prefix + ".norm", cin, group_size);
    l.conv1 = Conv2dLayer<S>::make(ps, prefix + ".conv1", cin, cout, 3, rng);
    l.conv2 = Conv2dLayer<S>::make(ps, prefix + ".conv2", cout, cout, 3, rng);
    if (cin != cout) {
      l.shortcut = Conv2dLayer<S>::make(ps, prefix + ".shortcut", cin, cout, 1, rng);
    }
    return l;
  }
};

template <class S>
Var<S> forward(Tape<S>& t, const ResBlock<S>& l, Var<S> x) {
  Var<S> h = forward(t, l.norm, x);
  h = ops::activation(t, forward(t, l.conv1, h), Act::swish);
  h = forward(t, l.conv2, h);
  Var<S> s = l.shortcut ? forward(t, *l.shortcut, x) : x;
  return ops::add(t, h, s);
}

/// One decoder step: optional 2x bilinear upsample, then a residual block.
template <class S>
struct DecoderStage {
  bool upsample = true;
  ResBlock<S> block;

  static DecoderStage make(ParamStore<S>& ps, const std::string& prefix, std::size_t cin,
                           std::size_t cout, bool upsample, Rng& rng,
                           std::size_t group_size = 8) {
    DecoderStage l;
    l.upsample = upsample;
    l.block = ResBlock<S>::make(ps, prefix, cin, cout, rng, group_size);
    return l;
  }
};

template <class S>
Var<S> forward(Tape<S>& t, const DecoderStage<S>& l, Var<S> x) {
  if (l.upsample) {
    const Tensor<S>& v = t.val(x);
    x = ops::bilinear_resize(t, x, 2 * v.extent(1), 2 * v.extent(2));
  }
  return forward(t, l.block, x);
}

}  // namespace dscale::layers
