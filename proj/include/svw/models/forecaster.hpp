#pragma once

// Common interface of the frame forecasters and autoregressive rollout.

#include <cmath>
#include <deque>
#include <string>
#include <vector>

#include "svw/ad/module.hpp"
#include "svw/models/config.hpp"

namespace svw {

using ad::Shape;
using ad::Tensor;

/// Decomposition of the final (linear) layer for one output frame:
/// output = bias_map + sum_c contribution(c).
template <class T>
struct HeadDecomposition {
  int height = 0, width = 0;
  std::vector<double> bias_map;
  /// One map per feature channel.
  std::vector<std::vector<double>> contributions;
  /// Ranking weight per channel (magnitude of its final-layer weights).
  std::vector<double> weight_magnitude;
};

/// Maps N input frames (batch, N, F, F) to M predicted frames (batch, M, F, F).
template <class T>
class Forecaster : public ad::Module<T> {
 public:
  explicit Forecaster(ModelConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const ModelConfig& config() const { return cfg_; }
  int n_in() const { return cfg_.n_in; }
  int n_out() const { return cfg_.n_out; }
  int frame_size() const { return cfg_.frame_size; }

  virtual Tensor<T> forward(const Tensor<T>& frames) = 0;

  /// Restarts any internal randomness (dropout masks) from `seed`.
  virtual void reseed(std::uint64_t /*seed*/) {}

  /// Final-layer decomposition of output frame `j` of sample `b` from the most
  /// recent forward pass. Architectures without a linear final layer throw.
  virtual HeadDecomposition<T> decompose_head(int /*b*/, int /*j*/) const {
    throw UsageError("architecture " + to_string(cfg_.arch) + " does not expose a linear final layer");
  }

 protected:
  void check_input(const Tensor<T>& frames) const {
    const Shape& s = frames.shape();
    if (s.c != cfg_.n_in || s.h != cfg_.frame_size || s.w != cfg_.frame_size) {
      throw ShapeError(to_string(cfg_.arch) + ": expected (b," + std::to_string(cfg_.n_in) + "," +
                           std::to_string(cfg_.frame_size) + "," + std::to_string(cfg_.frame_size) + ") input, got " +
                           s.str());
    }
  }

  ModelConfig cfg_;
};

/// Splits a transposed-convolution head with one output channel into
/// per-feature-channel maps. `features` is (1, C, h, w).
template <class T>
HeadDecomposition<T> decompose_deconv_head(const Tensor<T>& features, const ad::ConvTranspose2d<T>& head) {
  ad::NoGradGuard ng;
  const int c_in = features.shape().c;
  if (c_in != head.in_channels() || head.out_channels() != 1 || features.shape().n != 1) {
    throw ShapeError("decompose_deconv_head: features " + features.shape().str());
  }
  HeadDecomposition<T> d;
  for (int c = 0; c < c_in; ++c) {
    const auto w = ad::batch_slice(head.weight, c, c + 1);
    const auto map = ad::conv_transpose2d(ad::slice_channels(features, c, c + 1), w, Tensor<T>(), head.stride(),
                                          head.pad(), head.output_pad());
    d.height = map.shape().h;
    d.width = map.shape().w;
    d.contributions.emplace_back(map.values().begin(), map.values().end());
    double mag = 0.0;
    for (T x : w.values()) mag += std::abs(static_cast<double>(x));
    d.weight_magnitude.push_back(mag);
  }
  const double b = head.bias.defined() ? static_cast<double>(head.bias.values()[0]) : 0.0;
  d.bias_map.assign(static_cast<std::size_t>(d.height) * d.width, b);
  return d;
}

/// Autoregressive rollout: predicts M frames at a time and slides the N-frame
/// window over its own outputs until `horizon` frames exist. Gradients flow
/// through the rollout when enabled.
template <class T>
Tensor<T> rollout(Forecaster<T>& model, const Tensor<T>& seed, int horizon) {
  if (horizon < 1) throw UsageError("rollout horizon must be >= 1");
  const int n = model.n_in(), m = model.n_out();
  const Shape s = seed.shape();
  if (s.c != n) throw ShapeError("rollout: seed " + s.str() + " needs " + std::to_string(n) + " frames");
  std::deque<Tensor<T>> window;
  for (int k = 0; k < n; ++k) window.push_back(ad::slice_channels(seed, k, k + 1));
  std::vector<Tensor<T>> produced;
  while (static_cast<int>(produced.size()) < horizon) {
    const Tensor<T> input = n == 1 ? window.front() : ad::concat_channels(std::vector<Tensor<T>>(window.begin(), window.end()));
    const Tensor<T> out = model.forward(input);
    for (int j = 0; j < m; ++j) {
      auto frame = m == 1 ? out : ad::slice_channels(out, j, j + 1);
      if (static_cast<int>(produced.size()) < horizon) produced.push_back(frame);
      window.push_back(frame);
      window.pop_front();
    }
  }
  if (produced.size() == 1) return produced.front();
  return ad::concat_channels(produced);
}

}  // namespace svw
