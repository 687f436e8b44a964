#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "svw/core/config.hpp"
#include "svw/core/error.hpp"

namespace svw {

enum class Arch { lstm_baseline, convlstm, predrnnpp, unet };

inline std::string to_string(Arch a) {
  switch (a) {
    case Arch::lstm_baseline: return "lstm_baseline";
    case Arch::convlstm: return "convlstm";
    case Arch::predrnnpp: return "predrnnpp";
    case Arch::unet: return "unet";
  }
  return "?";
}

inline Arch parse_arch(const std::string& s) {
  for (Arch a : {Arch::lstm_baseline, Arch::convlstm, Arch::predrnnpp, Arch::unet}) {
    if (to_string(a) == s) return a;
  }
  throw UsageError("unknown architecture '" + s + "' (lstm_baseline, convlstm, predrnnpp, unet)");
}

inline const std::vector<Arch>& all_archs() {
  static const std::vector<Arch> v{Arch::lstm_baseline, Arch::convlstm, Arch::predrnnpp, Arch::unet};
  return v;
}

struct ModelConfig {
  Arch arch = Arch::unet;
  int n_in = 5;
  int n_out = 20;
  int frame_size = 32;
  /// Multiplier on the full-size channel counts.
  double channel_scale = 0.25;
  /// lstm_baseline latent vector width; 0 means 1000 * channel_scale.
  int latent_width = 0;
  /// Recurrent stack depth; 0 means the architecture default (3 ConvLSTM, 4 Causal LSTM).
  int n_layers = 0;
  std::uint64_t init_seed = 0;

  /// Desk-scale defaults with the output length each architecture was selected with.
  static ModelConfig desk(Arch a) {
    ModelConfig c;
    c.arch = a;
    c.n_out = a == Arch::convlstm ? 10 : 20;
    return c;
  }

  /// Full-size configuration (128 x 128 frames, unscaled channels).
  static ModelConfig full(Arch a) {
    auto c = desk(a);
    c.frame_size = 128;
    c.channel_scale = 1.0;
    return c;
  }

  int channels(int full_count) const {
    return std::max(1, static_cast<int>(std::lround(full_count * channel_scale)));
  }

  int latent() const { return latent_width > 0 ? latent_width : channels(1000); }

  int layers() const {
    if (n_layers > 0) return n_layers;
    return arch == Arch::predrnnpp ? 4 : 3;
  }

  void validate() const {
    if (n_in < 1) throw UsageError("n_in must be >= 1");
    if (n_out < 1) throw UsageError("n_out must be >= 1");
    if (frame_size < 1) throw UsageError("frame_size must be >= 1");
    if (!(channel_scale > 0.0)) throw UsageError("channel_scale must be > 0");
    if (latent_width < 0 || n_layers < 0) throw UsageError("latent_width and n_layers must be >= 0");
  }

  KeyValueConfig to_config() const {
    KeyValueConfig k;
    char buf[64];
    k.set("arch", to_string(arch));
    k.set("n_in", std::to_string(n_in));
    k.set("n_out", std::to_string(n_out));
    k.set("frame_size", std::to_string(frame_size));
    std::snprintf(buf, sizeof(buf), "%.17g", channel_scale);
    k.set("channel_scale", buf);
    k.set("latent_width", std::to_string(latent_width));
    k.set("n_layers", std::to_string(n_layers));
    k.set("init_seed", std::to_string(init_seed));
    return k;
  }

  /// Reads the keys written by to_config; absent keys keep the desk defaults of `arch`.
  static ModelConfig from_config(const KeyValueConfig& k) {
    auto c = desk(parse_arch(k.require("arch")));
    c.n_in = static_cast<int>(k.get_int("n_in", c.n_in));
    c.n_out = static_cast<int>(k.get_int("n_out", c.n_out));
    c.frame_size = static_cast<int>(k.get_int("frame_size", c.frame_size));
    c.channel_scale = k.get_double("channel_scale", c.channel_scale);
    c.latent_width = static_cast<int>(k.get_int("latent_width", c.latent_width));
    c.n_layers = static_cast<int>(k.get_int("n_layers", c.n_layers));
    try {
      c.init_seed = std::stoull(k.get("init_seed", "0"));
    } catch (const std::exception&) {
      throw DataError("config key 'init_seed': expected unsigned integer");
    }
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace svw
