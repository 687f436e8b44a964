#pragma once

// Long-horizon rollout evaluation, naive baselines, cross-dataset reports,
// timing against the solver, and final-layer feature reconstruction.
//
// Every RMSE here is in normalized pixel space (training-set mean/std).

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include "svw/dataset.hpp"
#include "svw/metrics.hpp"
#include "svw/models/forecaster.hpp"
#include "svw/render.hpp"
#include "svw/solver.hpp"

namespace svw {

inline constexpr std::array<int, 4> kSummarySteps{20, 40, 60, 80};

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

struct RolloutReport {
  std::string dataset;
  std::string model_id;
  std::size_t n_sequences = 0;
  std::vector<double> curve;  // curve[t - 1] is the RMSE at step t

  double at(int step) const {
    if (step < 1 || step > static_cast<int>(curve.size())) {
      throw UsageError("step " + std::to_string(step) + " outside a " + std::to_string(curve.size()) + "-step curve");
    }
    return curve[step - 1];
  }

  /// (step, rmse) for the summary steps the curve reaches.
  std::vector<std::pair<int, double>> summary() const {
    std::vector<std::pair<int, double>> out;
    for (int s : kSummarySteps)
      if (s <= static_cast<int>(curve.size())) out.push_back({s, curve[s - 1]});
    return out;
  }

  /// `step,rmse`
  std::string to_csv() const {
    std::string out = "step,rmse\n";
    for (std::size_t t = 0; t < curve.size(); ++t) out += std::to_string(t + 1) + "," + format_number(curve[t]) + "\n";
    return out;
  }
};

inline RolloutReport make_report(std::string dataset, std::string model_id, const std::vector<std::vector<double>>& per_seq) {
  return {std::move(dataset), std::move(model_id), per_seq.size(), mean_curve(per_seq)};
}

/// Model rolled out for T steps from the first N frames of every sequence.
template <class T>
RolloutReport rmse_curve(Forecaster<T>& model, const std::vector<SequenceRecord>& seqs, int horizon = 80,
                         const std::string& dataset = "", const std::string& model_id = "") {
  return make_report(dataset, model_id.empty() ? to_string(model.config().arch) : model_id,
                     model_curves(model, seqs, horizon));
}

/// Predictor: the rendered flat water surface, normalized, at every step.
inline RolloutReport baseline_flat(const std::vector<SequenceRecord>& seqs, int n_in, int horizon, const NormStats& norm,
                                   const RenderParams& rp) {
  require_rollout_length(seqs, n_in, horizon, "flat baseline");
  RenderParams r = rp;
  r.out_n = static_cast<int>(seqs.front().meta.frame_size);
  r.native_n = std::max(r.native_n, r.out_n);
  const Image img = render_frame(Field(r.native_n), 1.0, r);
  std::vector<float> frame(img.size());
  for (std::size_t i = 0; i < frame.size(); ++i) frame[i] = norm.apply(static_cast<float>(img.values()[i]));
  const std::span<const float> view(frame);
  return make_report("", "flat", predictor_curves(seqs, n_in, horizon, [&](std::size_t, int) { return view; }));
}

/// Predictor for step t: ground-truth frame t - 1 (persistence).
inline RolloutReport baseline_previous(const std::vector<SequenceRecord>& seqs, int n_in, int horizon) {
  require_rollout_length(seqs, n_in, horizon, "previous-frame baseline");
  return make_report("", "previous", predictor_curves(seqs, n_in, horizon,
                                                        [&](std::size_t s, int t) { return seqs[s].frame(n_in + t - 2); }));
}

/// Predictor: the last seed frame held for every step.
inline RolloutReport baseline_hold(const std::vector<SequenceRecord>& seqs, int n_in, int horizon) {
  require_rollout_length(seqs, n_in, horizon, "hold baseline");
  return make_report("", "hold",
                     predictor_curves(seqs, n_in, horizon, [&](std::size_t s, int) { return seqs[s].frame(n_in - 1); }));
}

/// Mean of several curves of equal length (e.g. one per seed).
inline RolloutReport average_reports(const std::vector<RolloutReport>& reports) {
  if (reports.empty()) throw UsageError("average_reports: nothing to average");
  std::vector<std::vector<double>> curves;
  for (const auto& r : reports) {
    if (r.curve.size() != reports.front().curve.size()) throw UsageError("average_reports: curve lengths differ");
    curves.push_back(r.curve);
  }
  RolloutReport out = reports.front();
  out.curve = mean_curve(curves);
  return out;
}

struct GeneralizationRow {
  std::string dataset;
  std::array<double, 4> rmse{};  // at kSummarySteps
};

struct GeneralizationReport {
  std::vector<GeneralizationRow> rows;

  const GeneralizationRow& row(const std::string& name) const {
    for (const auto& r : rows)
      if (r.dataset == name) return r;
    throw UsageError("no row for dataset '" + name + "'");
  }

  /// `dataset,rmse20,rmse40,rmse60,rmse80`
  std::string to_csv() const {
    std::string out = "dataset,rmse20,rmse40,rmse60,rmse80\n";
    for (const auto& r : rows) {
      out += r.dataset;
      for (double v : r.rmse) out += "," + format_number(v);
      out += "\n";
    }
    return out;
  }
};

struct NamedSequences {
  std::string name;
  std::vector<SequenceRecord> seqs;  // normalized with the training statistics
};

template <class T>
GeneralizationReport generalization_report(Forecaster<T>& model, const std::vector<NamedSequences>& sets) {
  GeneralizationReport rep;
  for (const auto& set : sets) {
    const auto r = rmse_curve(model, set.seqs, kSummarySteps.back(), set.name);
    GeneralizationRow row{set.name, {}};
    for (std::size_t i = 0; i < kSummarySteps.size(); ++i) row.rmse[i] = r.at(kSummarySteps[i]);
    rep.rows.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct SpeedRow {
  std::string method;
  double ms_per_frame = 0.0;
  double speedup = 0.0;  // solver time / this time
};

struct SpeedReport {
  std::vector<SpeedRow> rows;  // rows[0] is the solver

  const SpeedRow& row(const std::string& method) const {
    for (const auto& r : rows)
      if (r.method == method) return r;
    throw UsageError("no timing for '" + method + "'");
  }

  /// `method,ms_per_frame,speedup`
  std::string to_csv() const {
    std::string out = "method,ms_per_frame,speedup\n";
    for (const auto& r : rows) out += r.method + "," + format_number(r.ms_per_frame) + "," + format_number(r.speedup) + "\n";
    return out;
  }
};

/// Median over `trials` of the wall time of `run()` divided by `frames`, after `warmup` untimed runs.
template <class Run>
double median_ms_per_frame(Run&& run, int frames, int warmup, int trials) {
  if (frames < 1 || trials < 1 || warmup < 0) throw UsageError("timing needs frames >= 1, trials >= 1, warmup >= 0");
  for (int i = 0; i < warmup; ++i) run();
  std::vector<double> ms(trials);
  for (int i = 0; i < trials; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    ms[i] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / frames;
  }
  std::nth_element(ms.begin(), ms.begin() + trials / 2, ms.end());
  double med = ms[trials / 2];
  if (trials % 2 == 0) {
    const double lo = *std::max_element(ms.begin(), ms.begin() + trials / 2);
    med = 0.5 * (med + lo);
  }
  return med;
}

/// Solver stepping plus rendering at the dataset's output resolution.
inline double time_solver(const DatasetSpec& spec, int frames, int warmup, int trials) {
  spec.validate();
  auto sim = spec.sim_params(0.5 * (spec.tank_min_m + spec.tank_max_m));
  sim.n_frames = frames;
  const auto rp = spec.render_params(spec.azimuth_deg);
  Rng rng(spec.seed);
  const SimState initial = make_initial(spec.init_kind, sim, rng, spec.shape).first;
  double sink = 0.0;
  const double ms = median_ms_per_frame(
      [&] {
        simulate(initial, sim, [&](int, const SimState& s) { sink += render_frame(s.h, sim.dx(), rp).values()[0]; });
      },
      frames, warmup, trials);
  if (sink == -1.0) std::fputs("", stderr);  // keep the work observable
  return ms;
}

/// Autoregressive rollout of one sequence (batch 1).
template <class T>
double time_model(Forecaster<T>& model, int frames, int warmup, int trials) {
  if (model.training()) throw UsageError("timing requires a model in eval mode");
  ad::NoGradGuard ng;
  const int f = model.frame_size();
  std::vector<T> seed(static_cast<std::size_t>(model.n_in()) * f * f);
  Rng rng(1);
  for (T& x : seed) x = static_cast<T>(rng.uniform(-1.0, 1.0));
  const auto x = Tensor<T>::from({1, model.n_in(), f, f}, std::move(seed));
  return median_ms_per_frame([&] { rollout(model, x, frames); }, frames, warmup, trials);
}

struct NamedModel {
  std::string name;
  Forecaster<float>* model;
};

/// Solver and models timed at the dataset's output resolution.
inline SpeedReport speed_bench(const std::vector<NamedModel>& models, const DatasetSpec& spec, int frames = 100,
                               int warmup = 1, int trials = 5) {
  if (trials < 5) throw UsageError("speed_bench needs at least 5 trials");
  SpeedReport rep;
  const double solver = time_solver(spec, frames, warmup, trials);
  rep.rows.push_back({"solver", solver, 1.0});
  for (const auto& m : models) {
    if (m.model->frame_size() != spec.frame_size) {
      throw UsageError("speed_bench: model '" + m.name + "' works at " + std::to_string(m.model->frame_size()) +
                       " px but the solver renders " + std::to_string(spec.frame_size) + " px");
    }
    const double t = time_model(*m.model, frames, warmup, trials);
    rep.rows.push_back({m.name, t, solver / t});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Feature reconstruction
// ---------------------------------------------------------------------------

struct FeatureReconstruction {
  int step = 0;
  int height = 0, width = 0;
  std::vector<float> output;                  // model output at `step`
  std::vector<int> order;                     // channels by decreasing weight magnitude
  std::vector<double> weight_magnitude;       // per channel
  std::vector<std::vector<double>> partials;  // partials[k]: bias map + top-k contributions
};

/// Rolls out from `seed` (1, N, F, F) to `step` and splits that output frame
/// into the final layer's per-channel contributions.
template <class T>
FeatureReconstruction feature_reconstruction(Forecaster<T>& model, const Tensor<T>& seed, int step = 80) {
  if (model.training()) throw UsageError("feature reconstruction requires a model in eval mode");
  if (seed.shape().n != 1) throw UsageError("feature reconstruction takes a single seed window");
  if (step < 1) throw UsageError("step must be >= 1");
  ad::NoGradGuard ng;
  const auto pred = rollout(model, seed, step);
  const int j = (step - 1) % model.n_out();
  const auto d = model.decompose_head(0, j);

  FeatureReconstruction r;
  r.step = step;
  r.height = d.height;
  r.width = d.width;
  const std::size_t hw = static_cast<std::size_t>(d.height) * d.width;
  r.output.assign(pred.values().end() - static_cast<std::ptrdiff_t>(hw), pred.values().end());
  r.weight_magnitude = d.weight_magnitude;
  r.order.resize(d.contributions.size());
  std::iota(r.order.begin(), r.order.end(), 0);
  std::stable_sort(r.order.begin(), r.order.end(),
                   [&](int a, int b) { return d.weight_magnitude[a] > d.weight_magnitude[b]; });
  std::vector<double> acc = d.bias_map;
  r.partials.push_back(acc);
  for (int c : r.order) {
    for (std::size_t i = 0; i < hw; ++i) acc[i] += d.contributions[c][i];
    r.partials.push_back(acc);
  }
  return r;
}

/// Writes output.pgm and partial_<k>.pgm (k = 0..C) in pixel space.
inline void write_reconstruction_pgms(const FeatureReconstruction& r, const NormStats& norm, const fs::path& dir) {
  fs::create_directories(dir);
  auto dump = [&](const fs::path& path, auto begin) {
    Image img(r.height);
    for (std::size_t i = 0; i < img.size(); ++i) img.values()[i] = norm.invert(static_cast<double>(begin[i]));
    write_pgm(path.string(), img);
  };
  dump(dir / "output.pgm", r.output.begin());
  for (std::size_t k = 0; k < r.partials.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "partial_%03zu.pgm", k);
    dump(dir / name, r.partials[k].begin());
  }
}

}  // namespace svw
