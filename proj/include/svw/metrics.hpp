#pragma once

// Per-frame RMSE curves in normalized space, shared by validation, evaluation
// and the naive baselines so that all of them accumulate identically.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "svw/dataset.hpp"
#include "svw/models/forecaster.hpp"

namespace svw {

/// sqrt(mean squared difference) over one frame.
template <class P, class Q>
double frame_rmse(const P& pred, const Q& truth) {
  double ss = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(truth[i]);
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(truth.size()));
}

/// Every sequence must be normalized and hold at least n_in + horizon frames.
inline void require_rollout_length(const std::vector<SequenceRecord>& seqs, int n_in, int horizon, const std::string& what) {
  if (seqs.empty()) throw DataError(what + ": no sequences");
  for (const auto& s : seqs) {
    if (!s.meta.normalized) throw DataError(what + ": sequences must be normalized");
    if (s.n_frames() < n_in + horizon) {
      throw DataError(what + ": sequence with " + std::to_string(s.n_frames()) + " frames is shorter than N + horizon = " +
                      std::to_string(n_in + horizon));
    }
  }
}

/// Mean over sequences (in order) of per-sequence curves.
inline std::vector<double> mean_curve(const std::vector<std::vector<double>>& per_sequence) {
  if (per_sequence.empty()) return {};
  std::vector<double> out(per_sequence.front().size(), 0.0);
  for (const auto& c : per_sequence)
    for (std::size_t t = 0; t < out.size(); ++t) out[t] += c[t];
  for (double& v : out) v /= static_cast<double>(per_sequence.size());
  return out;
}

/// Per-sequence RMSE curves of a generic predictor: `predict(s, t)` returns
/// the frame predicted for step t (1-based) of sequence s, where step t is
/// compared with ground-truth frame n_in + t - 1.
template <class Predict>
std::vector<std::vector<double>> predictor_curves(const std::vector<SequenceRecord>& seqs, int n_in, int horizon,
                                                  Predict&& predict) {
  std::vector<std::vector<double>> out;
  out.reserve(seqs.size());
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    std::vector<double> curve(horizon);
    for (int t = 1; t <= horizon; ++t) curve[t - 1] = frame_rmse(predict(s, t), seqs[s].frame(n_in + t - 1));
    out.push_back(std::move(curve));
  }
  return out;
}

/// Per-sequence RMSE curves of a model rolled out from the first n_in
/// ground-truth frames. The model must be in eval mode; it is not modified.
template <class T>
std::vector<std::vector<double>> model_curves(Forecaster<T>& model, const std::vector<SequenceRecord>& seqs, int horizon,
                                              int batch = 16) {
  if (model.training()) throw UsageError("rollout evaluation requires a model in eval mode");
  const int n = model.n_in();
  require_rollout_length(seqs, n, horizon, "rollout evaluation");
  const int f = model.frame_size();
  const std::size_t hw = static_cast<std::size_t>(f) * f;
  for (const auto& s : seqs) {
    if (static_cast<int>(s.meta.frame_size) != f) {
      throw DataError("rollout evaluation: frame size " + std::to_string(s.meta.frame_size) + " does not match model " +
                      std::to_string(f));
    }
  }
  ad::NoGradGuard ng;
  std::vector<std::vector<double>> out(seqs.size());
  for (std::size_t b0 = 0; b0 < seqs.size(); b0 += static_cast<std::size_t>(batch)) {
    const std::size_t nb = std::min(seqs.size() - b0, static_cast<std::size_t>(batch));
    std::vector<T> seed(nb * n * hw);
    for (std::size_t i = 0; i < nb; ++i) {
      const auto& rec = seqs[b0 + i];
      std::copy(rec.frames.begin(), rec.frames.begin() + static_cast<std::ptrdiff_t>(n * hw), seed.begin() + i * n * hw);
    }
    const auto pred = rollout(model, Tensor<T>::from({static_cast<int>(nb), n, f, f}, std::move(seed)), horizon);
    for (std::size_t i = 0; i < nb; ++i) {
      std::vector<double> curve(horizon);
      for (int t = 1; t <= horizon; ++t) {
        const std::span<const T> p(pred.values().data() + (i * horizon + (t - 1)) * hw, hw);
        curve[t - 1] = frame_rmse(p, seqs[b0 + i].frame(n + t - 1));
      }
      out[b0 + i] = std::move(curve);
    }
  }
  return out;
}

}  // namespace svw
