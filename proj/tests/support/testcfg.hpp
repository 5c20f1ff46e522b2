#pragma once

#include "dscale/models/config.hpp"

// Small model configurations shared across test suites. "tiny" exercises
// realistic proportions cheaply; "micro" is small enough for elementwise
// finite-difference checks over every parameter.
namespace testcfg {

inline dscale::ModelConfig tiny(dscale::Arch a) {
  dscale::ModelConfig c;
  c.arch = a;
  c.variables = {"tas", "sfcWind", "zg500", "tp", "rsds", "rlds"};
  if (a == dscale::Arch::single_var) c.variables = {"tas"};
  c.patch = 4;
  c.embed_dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.head_dim = 0;
  c.mlp_hidden = 24;
  c.dropout = 0.1;
  c.decoder_widths = {16, 8};
  c.unet_widths = {8, 16};
  c.height = 16;
  c.width = 16;
  c.seed = 7;
  return c;
}

inline dscale::ModelConfig micro(dscale::Arch a) {
  dscale::ModelConfig c;
  c.arch = a;
  c.variables = {"alpha", "bravo"};
  if (a == dscale::Arch::single_var) c.variables = {"alpha"};
  c.patch = 2;
  c.embed_dim = 8;
  c.depth = 1;
  c.heads = 1;
  c.head_dim = 0;
  c.mlp_hidden = 8;
  c.dropout = 0.1;
  c.decoder_widths = {8};
  c.unet_widths = {8, 8};
  c.height = 4;
  c.width = 4;
  c.seed = 3;
  return c;
}

}  // namespace testcfg
