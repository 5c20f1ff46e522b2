#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "dscale/core/errors.hpp"

namespace dscale {

enum class Arch { single_var, vit_1e1d, vit_1emd, unet };

inline std::string to_string(Arch a) {
  switch (a) {
    case Arch::single_var: return "single_var";
    case Arch::vit_1e1d: return "1e1d";
    case Arch::vit_1emd: return "1emd";
    case Arch::unet: return "unet";
  }
  throw ConfigError("unknown architecture value");
}

inline Arch arch_from_string(const std::string& s) {
  if (s == "single_var") return Arch::single_var;
  if (s == "1e1d") return Arch::vit_1e1d;
  if (s == "1emd") return Arch::vit_1emd;
  if (s == "unet") return Arch::unet;
  throw ConfigError("unknown architecture '" + s + "' (want single_var|1e1d|1emd|unet)");
}

/// Hyperparameters for one model instance. height/width are the padded field
/// extents the model consumes. For the transformer architectures, head_dim 0
/// means "use embed_dim per head".
struct ModelConfig {
  Arch arch = Arch::single_var;
  std::vector<std::string> variables;
  int patch = 8;
  int embed_dim = 256;
  int depth = 6;
  int heads = 6;
  int head_dim = 0;
  int mlp_hidden = 512;
  double dropout = 0.1;
  std::vector<int> decoder_widths = {256, 128, 64, 32};
  std::vector<int> unet_widths = {32, 64, 128, 256};
  int height = 432;
  int width = 504;
  std::uint64_t seed = 0;

  bool is_vit() const { return arch != Arch::unet; }
  int input_channels() const {
    return arch == Arch::single_var ? 1 : static_cast<int>(variables.size());
  }
  int output_channels() const { return input_channels(); }
  int head_dim_resolved() const { return head_dim > 0 ? head_dim : embed_dim; }
  int grid_h() const { return height / patch; }
  int grid_w() const { return width / patch; }
  int tokens() const { return grid_h() * grid_w(); }
  int upsample_stages() const {
    int p = patch, n = 0;
    while (p > 1) {
      p /= 2;
      ++n;
    }
    return n;
  }
  int unet_stages() const { return static_cast<int>(unet_widths.size()) - 1; }

  void validate() const {
    if (variables.empty()) throw ConfigError("config: variables must be non-empty");
    std::set<std::string> uniq(variables.begin(), variables.end());
    if (uniq.size() != variables.size()) throw ConfigError("config: duplicate variable name");
    if (arch == Arch::single_var && variables.size() != 1) {
      throw ConfigError("config: single_var takes exactly one variable, got " +
                        std::to_string(variables.size()));
    }
    if (height <= 0 || width <= 0) throw ConfigError("config: field extents must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("config: dropout must be in [0,1)");
    if (is_vit()) {
      if (patch < 2 || (patch & (patch - 1)) != 0) {
        throw ConfigError("config: patch must be a power of two >= 2, got " +
                          std::to_string(patch));
      }
      if (height % patch != 0 || width % patch != 0) {
        throw ConfigError("config: " + std::to_string(height) + "x" + std::to_string(width) +
                          " not divisible by patch " + std::to_string(patch));
      }
      if (embed_dim <= 0 || embed_dim % 8 != 0) {
        throw ConfigError("config: embed_dim must be a positive multiple of 8");
      }
      if (depth < 1 || heads < 1 || mlp_hidden < 1 || head_dim < 0) {
        throw ConfigError("config: depth, heads, mlp_hidden must be positive");
      }
      const int ups = upsample_stages();
      const int n = static_cast<int>(decoder_widths.size());
      if (n != ups && n != ups + 1) {
        throw ConfigError("config: decoder_widths needs " + std::to_string(ups) + " or " +
                          std::to_string(ups + 1) + " entries for patch " + std::to_string(patch) +
                          ", got " + std::to_string(n));
      }
      for (int w : decoder_widths) {
        if (w <= 0 || w % 8 != 0) {
          throw ConfigError("config: decoder widths must be positive multiples of 8");
        }
      }
    } else {
      if (unet_widths.size() < 2) {
        throw ConfigError("config: unet_widths needs stage widths plus a bottleneck width");
      }
      for (int w : unet_widths) {
        if (w <= 0 || w % 8 != 0) {
          throw ConfigError("config: unet widths must be positive multiples of 8");
        }
      }
      const int stages = unet_stages();
      const int div = 1 << stages;
      if (height % div != 0 || width % div != 0) {
        throw ConfigError("config: " + std::to_string(height) + "x" + std::to_string(width) +
                          " not divisible by 2^" + std::to_string(stages) + " for pooling");
      }
    }
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"arch", to_string(arch)},
                          {"variables", variables},
                          {"patch", patch},
                          {"embed_dim", embed_dim},
                          {"depth", depth},
                          {"heads", heads},
                          {"head_dim", head_dim},
                          {"mlp_hidden", mlp_hidden},
                          {"dropout", dropout},
                          {"decoder_widths", decoder_widths},
                          {"unet_widths", unet_widths},
                          {"height", height},
                          {"width", width},
                          {"seed", seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
      c.arch = arch_from_string(j.at("arch").get<std::string>());
      c.variables = j.at("variables").get<std::vector<std::string>>();
      c.patch = j.value("patch", c.patch);
      c.embed_dim = j.value("embed_dim", c.embed_dim);
      c.depth = j.value("depth", c.depth);
      c.heads = j.value("heads", c.heads);
      c.head_dim = j.value("head_dim", c.head_dim);
      c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
      c.dropout = j.value("dropout", c.dropout);
      c.decoder_widths = j.value("decoder_widths", c.decoder_widths);
      c.unet_widths = j.value("unet_widths", c.unet_widths);
      c.height = j.value("height", c.height);
      c.width = j.value("width", c.width);
      c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
  }

  /// Reference variable set and hyperparameters for full-scale fields.
  static ModelConfig reference_scale(Arch a) {
    ModelConfig c;
    c.arch = a;
    c.variables = {"tas", "sfcWind", "zg500", "tp", "rsds", "rlds"};
    if (a == Arch::single_var) c.variables = {"tas"};
    return c;
  }
};

}  // namespace dscale
