#pragma once

// Tank-size regression from a frozen U-Net encoder.
//
// A small head (two stride-2 convs, global average pool, linear) reads the
// bottleneck features of an N-frame window and predicts the tank size. The
// encoder runs without gradient and is never handed to the optimizer, so its
// parameters stay byte-identical. Errors are mean absolute errors in meters
// over the first window of each sequence.

#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "svw/ad/checkpoint.hpp"
#include "svw/ad/optim.hpp"
#include "svw/dataset.hpp"
#include "svw/models/factory.hpp"

namespace svw {

enum class EncoderSource { pretrained, random };

inline std::string to_string(EncoderSource s) { return s == EncoderSource::pretrained ? "pretrained" : "random"; }

inline EncoderSource parse_encoder_source(const std::string& s) {
  if (s == "pretrained") return EncoderSource::pretrained;
  if (s == "random") return EncoderSource::random;
  throw UsageError("unknown encoder source '" + s + "' (expected pretrained or random)");
}

struct ProbeConfig {
  int epochs = 30;
  int batch = 16;
  double lr = 1e-3;
  int windows_per_sequence = 4;
  int width = 32;
  std::uint64_t seed = 1;

  void validate() const {
    if (epochs < 1 || batch < 1 || windows_per_sequence < 1 || width < 1) {
      throw UsageError("probe config: epochs, batch, windows_per_sequence and width must be >= 1");
    }
    if (!(lr > 0)) throw UsageError("probe config: lr must be positive");
  }
};

template <class T>
class ProbeHead : public ad::Module<T> {
 public:
  ProbeHead(int in_ch, int width, std::uint64_t seed) {
    a_ = &this->add_module("a", std::make_unique<ad::Conv2d<T>>(in_ch, width, 3, 2, 1));
    b_ = &this->add_module("b", std::make_unique<ad::Conv2d<T>>(width, width, 3, 2, 1));
    fc_ = &this->add_module("fc", std::make_unique<ad::Linear<T>>(width, 1));
    Rng rng(seed);
    a_->reset(rng, ad::gain::relu);
    b_->reset(rng, ad::gain::relu);
    fc_->reset(rng, ad::gain::linear);
  }

  Tensor<T> operator()(const Tensor<T>& features) const {
    return (*fc_)(ad::mean_hw(ad::relu((*b_)(ad::relu((*a_)(features))))));
  }

 private:
  ad::Conv2d<T>*a_, *b_;
  ad::Linear<T>* fc_;
};

/// Frozen encoder plus trainable head. The head regresses the standardized
/// size (s - label_mean) / label_scale.
template <class T>
class ProbeModel {
 public:
  ProbeModel(std::unique_ptr<UNet<T>> encoder, const ProbeConfig& cfg, double label_mean, double label_scale)
      : encoder_(std::move(encoder)),
        head_(std::make_unique<ProbeHead<T>>(encoder_->encoder_channels().back(), cfg.width, child_seed(cfg.seed, 0xE1))),
        label_mean_(label_mean),
        label_scale_(label_scale) {
    encoder_->eval();
  }

  UNet<T>& encoder() { return *encoder_; }
  ProbeHead<T>& head() { return *head_; }
  int window() const { return encoder_->n_in(); }
  int frame_size() const { return encoder_->frame_size(); }
  double label_mean() const { return label_mean_; }
  double label_scale() const { return label_scale_; }

  Tensor<T> features(const Tensor<T>& windows) {
    ad::NoGradGuard ng;
    return encoder_->encode(windows);
  }

  /// Standardized prediction; differentiable w.r.t. the head only.
  Tensor<T> forward(const Tensor<T>& windows) { return (*head_)(features(windows)); }

  /// Predicted sizes in meters.
  std::vector<double> predict(const Tensor<T>& windows) {
    ad::NoGradGuard ng;
    const auto y = forward(windows);
    std::vector<double> out;
    for (T v : y.values()) out.push_back(label_mean_ + label_scale_ * static_cast<double>(v));
    return out;
  }

 private:
  std::unique_ptr<UNet<T>> encoder_;
  std::unique_ptr<ProbeHead<T>> head_;
  double label_mean_, label_scale_;
};

inline void require_tank_sizes(const std::vector<SequenceRecord>& seqs, const std::string& what) {
  if (seqs.empty()) throw DataError(what + ": no sequences");
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const double t = seqs[i].meta.tank_size_m;
    if (!(std::isfinite(t) && t > 0)) throw DataError(what + ": sequence " + std::to_string(i) + " has no tank_size_m metadata");
  }
}

/// Mean absolute error of `predict` over the first window of every sequence.
/// predict(windows (b, n, f, f)) returns one size per sample.
template <class T, class Predict>
double probe_mae(const std::vector<SequenceRecord>& seqs, int window, Predict&& predict, int batch = 16) {
  require_tank_sizes(seqs, "probe");
  const int f = static_cast<int>(seqs.front().meta.frame_size);
  const std::size_t hw = static_cast<std::size_t>(f) * f;
  double sum = 0.0;
  for (std::size_t b0 = 0; b0 < seqs.size(); b0 += static_cast<std::size_t>(batch)) {
    const int nb = static_cast<int>(std::min(seqs.size() - b0, static_cast<std::size_t>(batch)));
    std::vector<T> xs(static_cast<std::size_t>(nb) * window * hw);
    for (int i = 0; i < nb; ++i) {
      copy_clip(seqs[b0 + i], 0, window, FlipMode::none, xs.data() + static_cast<std::size_t>(i) * window * hw);
    }
    const std::vector<double> pred = predict(Tensor<T>::from({nb, window, f, f}, std::move(xs)));
    if (static_cast<int>(pred.size()) != nb) throw UsageError("probe: predictor returned the wrong number of values");
    for (int i = 0; i < nb; ++i) sum += std::abs(pred[i] - seqs[b0 + i].meta.tank_size_m);
  }
  return sum / static_cast<double>(seqs.size());
}

template <class T>
double eval_probe(ProbeModel<T>& model, const std::vector<SequenceRecord>& seqs) {
  if (!seqs.empty() && static_cast<int>(seqs.front().meta.frame_size) != model.frame_size()) {
    throw DataError("probe: frame size does not match the encoder");
  }
  return probe_mae<T>(seqs, model.window(), [&](const Tensor<T>& x) { return model.predict(x); });
}

/// Always predicts the mean tank size of the sequences it was fitted on.
struct DummyRegressor {
  double mean = 0.0;

  static DummyRegressor fit(const std::vector<SequenceRecord>& seqs) {
    require_tank_sizes(seqs, "dummy regressor");
    double s = 0.0;
    for (const auto& r : seqs) s += r.meta.tank_size_m;
    return {s / static_cast<double>(seqs.size())};
  }

  double mae(const std::vector<SequenceRecord>& seqs) const {
    require_tank_sizes(seqs, "dummy regressor");
    double s = 0.0;
    for (const auto& r : seqs) s += std::abs(mean - r.meta.tank_size_m);
    return s / static_cast<double>(seqs.size());
  }
};

/// Takes the U-Net out of a generic model pointer.
template <class T>
std::unique_ptr<UNet<T>> as_unet(std::unique_ptr<Forecaster<T>> model) {
  auto* u = dynamic_cast<UNet<T>*>(model.get());
  if (!u) throw UsageError("probe: the encoder must come from a unet, not " + to_string(model->config().arch));
  model.release();
  return std::unique_ptr<UNet<T>>(u);
}

/// An untrained U-Net with the same shape as `cfg`.
template <class T>
std::unique_ptr<UNet<T>> random_encoder(ModelConfig cfg, std::uint64_t seed) {
  if (cfg.arch != Arch::unet) throw UsageError("probe: the encoder must come from a unet");
  cfg.init_seed = child_seed(seed, 0xE0);
  return std::make_unique<UNet<T>>(cfg);
}

struct ProbeHistory {
  std::vector<double> train_mse;
  std::vector<double> val_mae;
  int best_epoch = 0;
};

/// Trains a head on the training split (normalized with `norm`) and keeps the
/// head of the epoch with the lowest validation MAE.
template <class T>
ProbeModel<T> train_probe(std::unique_ptr<UNet<T>> encoder, const Dataset& ds, const NormStats& norm, const ProbeConfig& cfg,
                          ProbeHistory* history = nullptr, std::ostream* log = nullptr) {
  cfg.validate();
  const auto train = ds.normalized("train", norm);
  const auto val = ds.normalized("val", norm);
  require_tank_sizes(train, ds.name + " training split");
  require_tank_sizes(val, ds.name + " validation split");
  const int n = encoder->n_in(), f = encoder->frame_size();
  if (static_cast<int>(train.front().meta.frame_size) != f) throw DataError("probe: frame size does not match the encoder");
  for (const auto& s : train) {
    if (s.n_frames() < n) throw DataError("probe: sequences shorter than the encoder window");
  }

  double mean = 0.0, var = 0.0;
  for (const auto& s : train) mean += s.meta.tank_size_m;
  mean /= static_cast<double>(train.size());
  for (const auto& s : train) var += (s.meta.tank_size_m - mean) * (s.meta.tank_size_m - mean);
  const double sd = std::sqrt(var / static_cast<double>(train.size()));
  ProbeModel<T> model(std::move(encoder), cfg, mean, sd > 1e-9 ? sd : 1.0);

  const std::size_t hw = static_cast<std::size_t>(f) * f;
  Rng rng(child_seed(cfg.seed, 0xE2));
  ad::Adam<T> adam(model.head().parameters());
  std::vector<ad::CheckpointEntry> best;
  double best_mae = std::numeric_limits<double>::infinity();
  ProbeHistory hist;
  struct Window {
    int seq, start;
  };
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<Window> windows;
    for (std::size_t s = 0; s < train.size(); ++s) {
      for (int k = 0; k < cfg.windows_per_sequence; ++k) {
        windows.push_back({static_cast<int>(s), static_cast<int>(rng.below(static_cast<std::uint64_t>(train[s].n_frames() - n + 1)))});
      }
    }
    rng.shuffle(windows);
    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t b0 = 0; b0 < windows.size(); b0 += static_cast<std::size_t>(cfg.batch)) {
      const int nb = static_cast<int>(std::min(windows.size() - b0, static_cast<std::size_t>(cfg.batch)));
      std::vector<T> xs(static_cast<std::size_t>(nb) * n * hw), ys(static_cast<std::size_t>(nb));
      for (int i = 0; i < nb; ++i) {
        const auto& w = windows[b0 + i];
        copy_clip(train[w.seq], w.start, n, FlipMode::none, xs.data() + static_cast<std::size_t>(i) * n * hw);
        ys[i] = static_cast<T>((train[w.seq].meta.tank_size_m - model.label_mean()) / model.label_scale());
      }
      adam.zero_grad();
      auto loss = ad::mse(model.forward(Tensor<T>::from({nb, n, f, f}, std::move(xs))), Tensor<T>::from({nb, 1, 1, 1}, std::move(ys)));
      const double lv = static_cast<double>(loss.item());
      if (!std::isfinite(lv)) throw LossDivergedError(steps + 1, lv);
      ad::backward(loss);
      adam.step(cfg.lr);
      loss_sum += lv;
      ++steps;
    }
    const double mae = eval_probe(model, val);
    hist.train_mse.push_back(loss_sum / steps);
    hist.val_mae.push_back(mae);
    if (mae < best_mae) {
      best_mae = mae;
      hist.best_epoch = epoch;
      best = ad::checkpoint_entries(model.head());
    }
    if (log) {
      char buf[120];
      std::snprintf(buf, sizeof(buf), "probe epoch %d  train_mse %.5f  val_mae %.4f m\n", epoch, loss_sum / steps, mae);
      *log << buf << std::flush;
    }
  }
  ad::apply_checkpoint(model.head(), best, "best probe epoch");
  if (history) *history = hist;
  return model;
}

struct ProbeRow {
  std::string encoder;
  std::string dataset;
  double mae_m = 0.0;
};

struct ProbeReport {
  std::vector<ProbeRow> rows;

  const ProbeRow& row(const std::string& encoder, const std::string& dataset) const {
    for (const auto& r : rows)
      if (r.encoder == encoder && r.dataset == dataset) return r;
    throw UsageError("probe report has no row " + encoder + "/" + dataset);
  }

  /// `encoder,dataset,mae_m`
  std::string to_csv() const {
    std::string out = "encoder,dataset,mae_m\n";
    char buf[64];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof(buf), "%.9g", r.mae_m);
      out += r.encoder + "," + r.dataset + "," + buf + "\n";
    }
    return out;
  }
};

}  // namespace svw
