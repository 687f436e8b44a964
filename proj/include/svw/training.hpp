#pragma once

// Training loop with rollout-based validation, model selection and a grid
// search driver.
//
// One epoch draws K clips from every training sequence, shuffles them, and
// takes one Adam step per batch of b clips. After each epoch the model is
// rolled out on the validation split and the learning-rate schedule is fed
// the mean 50-frame RMSE. The parameters of the best epoch are kept.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "svw/ad/checkpoint.hpp"
#include "svw/ad/optim.hpp"
#include "svw/dataset.hpp"
#include "svw/metrics.hpp"
#include "svw/models/factory.hpp"

namespace svw {

struct TrainConfig {
  int n_in = 5;
  int n_out = 20;
  int clips_per_sequence = 10;  // K
  int batch = 16;
  double lr = 1e-4;
  int patience = 5;
  int max_epochs = 100;
  double budget_seconds = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 1;
  /// Train on rollouts that feed the model its own outputs (after the warm-up).
  bool self_conditioning = false;
  int self_cond_blocks = 2;
  int warmup_epochs = 1;
  int val_horizon = 50;
  double lr_factor = 1e-2;
  bool flips = true;

  /// Per-architecture choices (input, output, K, batch, lr, patience).
  static TrainConfig defaults(Arch a) {
    TrainConfig c;
    switch (a) {
      case Arch::lstm_baseline:
        c.clips_per_sequence = 10, c.batch = 16, c.lr = 1e-4, c.patience = 5;
        break;
      case Arch::convlstm:
        c.n_out = 10, c.clips_per_sequence = 5, c.batch = 8, c.lr = 1e-3, c.patience = 7;
        break;
      case Arch::predrnnpp:
        c.clips_per_sequence = 5, c.batch = 4, c.lr = 1e-4, c.patience = 3;
        break;
      case Arch::unet:
        c.clips_per_sequence = 10, c.batch = 16, c.lr = 1e-4, c.patience = 7, c.self_conditioning = true;
        break;
    }
    return c;
  }

  void validate() const {
    auto positive = [](const char* name, double v) {
      if (!(v > 0)) throw UsageError(std::string("train config: ") + name + " must be positive");
    };
    positive("n_in", n_in);
    positive("n_out", n_out);
    positive("clips_per_sequence", clips_per_sequence);
    positive("batch", batch);
    positive("lr", lr);
    positive("patience", patience);
    positive("max_epochs", max_epochs);
    positive("budget_seconds", budget_seconds);
    positive("self_cond_blocks", self_cond_blocks);
    positive("val_horizon", val_horizon);
    positive("lr_factor", lr_factor);
    if (warmup_epochs < 0) throw UsageError("train config: warmup_epochs must be >= 0");
    if (lr_factor >= 1) throw UsageError("train config: lr_factor must be below 1");
  }

  KeyValueConfig to_config() const {
    KeyValueConfig k;
    auto num = [](double v) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    };
    k.set("n_in", std::to_string(n_in));
    k.set("n_out", std::to_string(n_out));
    k.set("clips_per_sequence", std::to_string(clips_per_sequence));
    k.set("batch", std::to_string(batch));
    k.set("lr", num(lr));
    k.set("patience", std::to_string(patience));
    k.set("max_epochs", std::to_string(max_epochs));
    k.set("budget_seconds", num(budget_seconds));
    k.set("seed", std::to_string(seed));
    k.set("self_conditioning", self_conditioning ? "true" : "false");
    k.set("self_cond_blocks", std::to_string(self_cond_blocks));
    k.set("warmup_epochs", std::to_string(warmup_epochs));
    k.set("val_horizon", std::to_string(val_horizon));
    k.set("lr_factor", num(lr_factor));
    k.set("flips", flips ? "true" : "false");
    return k;
  }

  /// Keys present in `k` override `base`; other keys are ignored.
  static TrainConfig from_config(const KeyValueConfig& k, TrainConfig base) {
    auto i = [&](const char* key, int& v) { v = static_cast<int>(k.get_int(key, v)); };
    i("n_in", base.n_in);
    i("n_out", base.n_out);
    i("clips_per_sequence", base.clips_per_sequence);
    i("batch", base.batch);
    base.lr = k.get_double("lr", base.lr);
    i("patience", base.patience);
    i("max_epochs", base.max_epochs);
    base.budget_seconds = k.get_double("budget_seconds", base.budget_seconds);
    if (k.has("seed")) {
      const auto v = k.get("seed", "");
      try {
        std::size_t pos = 0;
        base.seed = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw DataError("config key 'seed': expected an unsigned integer, got '" + v + "'");
      }
    }
    base.self_conditioning = k.get_bool("self_conditioning", base.self_conditioning);
    i("self_cond_blocks", base.self_cond_blocks);
    i("warmup_epochs", base.warmup_epochs);
    i("val_horizon", base.val_horizon);
    base.lr_factor = k.get_double("lr_factor", base.lr_factor);
    base.flips = k.get_bool("flips", base.flips);
    base.validate();
    return base;
  }

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k{"n_in",          "n_out",        "clips_per_sequence", "batch",
                                            "lr",            "patience",     "max_epochs",         "budget_seconds",
                                            "seed",          "self_conditioning", "self_cond_blocks", "warmup_epochs",
                                            "val_horizon",   "lr_factor",    "flips"};
    return k;
  }

  bool operator==(const TrainConfig&) const = default;
};

struct EpochRecord {
  int epoch = 0;
  double train_mse = 0.0;
  double val_rmse50 = 0.0;
  double lr = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;  // 1-based; 0 if no epoch completed
  double best_val = std::numeric_limits<double>::infinity();
  bool budget_stop = false;
  long long iterations = 0;

  /// `epoch,train_mse,val_rmse50,lr`
  std::string to_csv() const {
    std::string out = "epoch,train_mse,val_rmse50,lr\n";
    char buf[160];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", e.epoch, e.train_mse, e.val_rmse50, e.lr);
      out += buf;
    }
    return out;
  }

  bool operator==(const TrainHistory&) const = default;
};

/// Mean over sequences and steps of the per-frame RMSE of a `horizon`-frame
/// rollout started from each sequence's first N frames (normalized space).
template <class T>
double validate_rollout(Forecaster<T>& model, const std::vector<SequenceRecord>& seqs, int horizon = 50, int batch = 16) {
  const auto curve = mean_curve(model_curves(model, seqs, horizon, batch));
  double s = 0.0;
  for (double v : curve) s += v;
  return s / static_cast<double>(curve.size());
}

struct Candidate {
  std::string label;
  int epoch = 0;
  double val_rmse = 0.0;
};

/// Index of the lowest validation error; ties go to the earliest epoch, then
/// to the smallest label, so the winner does not depend on the order.
inline std::size_t select(const std::vector<Candidate>& c) {
  if (c.empty()) throw UsageError("select: no candidates");
  auto key = [](double v) { return std::isnan(v) ? std::numeric_limits<double>::infinity() : v; };
  std::size_t best = 0;
  for (std::size_t i = 1; i < c.size(); ++i) {
    const double a = key(c[i].val_rmse), b = key(c[best].val_rmse);
    if (a < b || (a == b && (c[i].epoch < c[best].epoch || (c[i].epoch == c[best].epoch && c[i].label < c[best].label)))) {
      best = i;
    }
  }
  return best;
}

struct TrainOptions {
  /// When set, model.cfg + params.svwp of the best epoch and history.csv are
  /// rewritten as training progresses.
  fs::path out_dir;
  std::ostream* log = nullptr;
};

template <class T>
TrainHistory train(Forecaster<T>& model, const Dataset& ds, const TrainConfig& cfg, const TrainOptions& opt = {}) {
  using Clock = std::chrono::steady_clock;
  cfg.validate();
  if (model.n_in() != cfg.n_in || model.n_out() != cfg.n_out) {
    throw UsageError("train: model maps " + std::to_string(model.n_in()) + "->" + std::to_string(model.n_out()) +
                     " frames but the config asks for " + std::to_string(cfg.n_in) + "->" + std::to_string(cfg.n_out));
  }
  const auto train_seqs = ds.normalized("train", ds.norm);
  const auto val_seqs = ds.normalized("val", ds.norm);
  if (train_seqs.empty()) throw DataError(ds.name + ": training split is empty");
  if (val_seqs.empty()) throw DataError(ds.name + ": validation split is empty");
  require_rollout_length(val_seqs, cfg.n_in, cfg.val_horizon, "validation");
  const int f = model.frame_size();
  if (static_cast<int>(train_seqs.front().meta.frame_size) != f) {
    throw DataError(ds.name + ": frame size " + std::to_string(train_seqs.front().meta.frame_size) +
                    " does not match the model's " + std::to_string(f));
  }
  const std::size_t hw = static_cast<std::size_t>(f) * f;
  if (!opt.out_dir.empty()) fs::create_directories(opt.out_dir);

  const auto t0 = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - t0).count(); };
  Rng rng(child_seed(cfg.seed, 0x7A1));
  ad::Adam<T> adam(model.parameters());
  ad::LrSchedule sched(cfg.lr, cfg.patience, cfg.lr_factor);
  std::vector<ad::CheckpointEntry> best;
  TrainHistory hist;

  struct Clip {
    int seq, start;
    FlipMode flip;
  };
  for (int epoch = 1; epoch <= cfg.max_epochs && !hist.budget_stop; ++epoch) {
    const bool self_cond = cfg.self_conditioning && epoch > cfg.warmup_epochs;
    const int horizon = self_cond ? cfg.self_cond_blocks * cfg.n_out : cfg.n_out;
    const int len = cfg.n_in + horizon;

    std::vector<Clip> clips;
    for (std::size_t s = 0; s < train_seqs.size(); ++s) {
      for (int start : sample_subsequences(train_seqs[s], cfg.n_in, horizon, cfg.clips_per_sequence, rng)) {
        const auto flip = cfg.flips ? static_cast<FlipMode>(rng.below(4)) : FlipMode::none;
        clips.push_back({static_cast<int>(s), start, flip});
      }
    }
    rng.shuffle(clips);

    model.train();
    model.reseed(child_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    double loss_sum = 0.0;
    int steps = 0;
    std::vector<T> clip_buf(static_cast<std::size_t>(len) * hw);
    for (std::size_t b0 = 0; b0 < clips.size(); b0 += static_cast<std::size_t>(cfg.batch)) {
      const int nb = static_cast<int>(std::min(clips.size() - b0, static_cast<std::size_t>(cfg.batch)));
      std::vector<T> xs(static_cast<std::size_t>(nb) * cfg.n_in * hw), ys(static_cast<std::size_t>(nb) * horizon * hw);
      for (int i = 0; i < nb; ++i) {
        const Clip& c = clips[b0 + i];
        copy_clip(train_seqs[c.seq], c.start, len, c.flip, clip_buf.data());
        const auto split = clip_buf.begin() + static_cast<std::ptrdiff_t>(cfg.n_in * hw);
        std::copy(clip_buf.begin(), split, xs.begin() + static_cast<std::ptrdiff_t>(i * cfg.n_in * hw));
        std::copy(split, clip_buf.end(), ys.begin() + static_cast<std::ptrdiff_t>(i * horizon * hw));
      }
      const auto x = Tensor<T>::from({nb, cfg.n_in, f, f}, std::move(xs));
      const auto y = Tensor<T>::from({nb, horizon, f, f}, std::move(ys));
      adam.zero_grad();
      const auto pred = self_cond ? rollout(model, x, horizon) : model.forward(x);
      auto loss = ad::mse(pred, y);
      const double lv = static_cast<double>(loss.item());
      ++hist.iterations;
      if (!std::isfinite(lv)) throw LossDivergedError(hist.iterations, lv);
      ad::backward(loss);
      adam.step(sched.lr);
      loss_sum += lv;
      ++steps;
      if (elapsed() > cfg.budget_seconds) {
        hist.budget_stop = true;
        break;
      }
    }

    model.eval();
    const double val = validate_rollout(model, val_seqs, cfg.val_horizon);
    if (!std::isfinite(val)) throw NumericError("non-finite validation RMSE after epoch " + std::to_string(epoch));
    hist.epochs.push_back({epoch, loss_sum / steps, val, sched.lr});
    if (val < hist.best_val) {
      hist.best_val = val;
      hist.best_epoch = epoch;
      best = ad::checkpoint_entries(model);
      if (!opt.out_dir.empty()) save_model(model, ds.norm, opt.out_dir);
    }
    if (!opt.out_dir.empty()) io::write_file_atomic(opt.out_dir / "history.csv", hist.to_csv());
    if (opt.log) {
      char buf[200];
      std::snprintf(buf, sizeof(buf), "epoch %d  train_mse %.5f  val_rmse50 %.5f  lr %.1e  %s %.0fs\n", epoch,
                    loss_sum / steps, val, sched.lr, self_cond ? "self-cond" : "teacher", elapsed());
      *opt.log << buf << std::flush;
    }
    sched.update(val);
  }
  if (!best.empty()) ad::apply_checkpoint(model, best, "best epoch");
  model.eval();
  return hist;
}

/// Value sets searched per hyperparameter.
struct GridSpace {
  std::vector<int> n_in{3, 5, 10};
  std::vector<int> n_out{1, 5, 10, 20};
  std::vector<int> clips_per_sequence{1, 3, 5, 10};
  std::vector<int> batch{16, 32};
  std::vector<double> lr{1e-2, 1e-3, 1e-4, 1e-5};
  std::vector<int> patience{5, 7};

  std::vector<TrainConfig> expand(const TrainConfig& base) const {
    std::vector<TrainConfig> out;
    for (int n : n_in)
      for (int m : n_out)
        for (int k : clips_per_sequence)
          for (int b : batch)
            for (double l : lr)
              for (int p : patience) {
                TrainConfig c = base;
                c.n_in = n, c.n_out = m, c.clips_per_sequence = k, c.batch = b, c.lr = l, c.patience = p;
                out.push_back(c);
              }
    return out;
  }
};

struct GridResult {
  std::vector<TrainConfig> configs;
  std::vector<Candidate> candidates;
  std::size_t best = 0;
};

/// Trains one model per grid point and selects by validation rollout error.
/// Run i is written to `<out_dir>/run_<i>` when an output directory is given.
template <class T>
GridResult grid_search(const ModelConfig& model_cfg, const Dataset& ds, const GridSpace& space, const TrainConfig& base,
                       const TrainOptions& opt = {}) {
  GridResult res;
  res.configs = space.expand(base);
  for (std::size_t i = 0; i < res.configs.size(); ++i) {
    const auto& tc = res.configs[i];
    ModelConfig mc = model_cfg;
    mc.n_in = tc.n_in;
    mc.n_out = tc.n_out;
    auto model = make_model<T>(mc);
    char label[32];
    std::snprintf(label, sizeof(label), "run_%04zu", i);
    TrainOptions o = opt;
    if (!opt.out_dir.empty()) {
      o.out_dir = opt.out_dir / label;
      fs::create_directories(o.out_dir);
      io::write_file_atomic(o.out_dir / "train.cfg", tc.to_config().to_string());
    }
    const auto hist = train(*model, ds, tc, o);
    res.candidates.push_back({label, hist.best_epoch, hist.best_val});
  }
  res.best = select(res.candidates);
  return res;
}

}  // namespace svw
