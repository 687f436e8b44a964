#pragma once

// Model construction and on-disk model directories:
//   model.cfg    key=value model configuration plus the NormStats it was trained with
//   params.svwp  parameter checkpoint

#include <filesystem>
#include <memory>

#include "svw/ad/checkpoint.hpp"
#include "svw/models/convlstm.hpp"
#include "svw/models/lstm_baseline.hpp"
#include "svw/models/predrnnpp.hpp"
#include "svw/models/unet.hpp"
#include "svw/render.hpp"

namespace svw {

template <class T>
std::unique_ptr<Forecaster<T>> make_model(const ModelConfig& cfg) {
  switch (cfg.arch) {
    case Arch::lstm_baseline: return std::make_unique<LstmBaseline<T>>(cfg);
    case Arch::convlstm: return std::make_unique<ConvLstmModel<T>>(cfg);
    case Arch::predrnnpp: return std::make_unique<PredRnnPP<T>>(cfg);
    case Arch::unet: return std::make_unique<UNet<T>>(cfg);
  }
  throw UsageError("unknown architecture");
}

inline KeyValueConfig model_file_config(const ModelConfig& cfg, const NormStats& norm) {
  auto k = cfg.to_config();
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", norm.mean);
  k.set("norm_mean", buf);
  std::snprintf(buf, sizeof(buf), "%.17g", norm.std);
  k.set("norm_std", buf);
  return k;
}

inline void write_text_atomic(const fs::path& path, const std::string& text) { io::write_file_atomic(path, text); }

template <class T>
void save_model(Forecaster<T>& model, const NormStats& norm, const fs::path& dir, const std::string& params_name = "params.svwp") {
  fs::create_directories(dir);
  ad::save_checkpoint(model, dir / params_name);
  write_text_atomic(dir / "model.cfg", model_file_config(model.config(), norm).to_string());
}

template <class T>
struct LoadedModel {
  std::unique_ptr<Forecaster<T>> model;
  NormStats norm;
};

template <class T>
LoadedModel<T> load_model(const fs::path& dir, const std::string& params_name = "params.svwp") {
  const auto k = KeyValueConfig::load((dir / "model.cfg").string());
  LoadedModel<T> out;
  out.model = make_model<T>(ModelConfig::from_config(k));
  out.norm = NormStats{KeyValueConfig::to_double("norm_mean", k.require("norm_mean")),
                       KeyValueConfig::to_double("norm_std", k.require("norm_std"))};
  ad::load_checkpoint(*out.model, dir / params_name);
  out.model->eval();
  return out;
}

}  // namespace svw
