#pragma once

// Central finite-difference check of reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "svw/ad/tensor.hpp"
#include "svw/core/random.hpp"

namespace svw::ad {

struct GradCheckResult {
  /// max |analytic - numeric| over a tensor, divided by max |numeric| of that tensor
  /// (floored at `scale_floor`); the maximum over tensors.
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
  /// Coordinates dropped because the probe straddled a kink (see `kink_tol`).
  std::size_t skipped = 0;
};

/// `loss_fn()` must rebuild the scalar loss from the current leaf values.
/// At most `max_per_tensor` elements of each leaf are probed (0 = all),
/// chosen with `seed`.
///
/// With `kink_tol > 0` a coordinate is skipped when its one-sided differences
/// disagree by more than 2 * kink_tol of the tensor scale, i.e. when the
/// central difference itself cannot be trusted to that tolerance (a ReLU-type
/// kink within eps). The decision uses the numeric values only.
template <class F>
GradCheckResult gradcheck(F&& loss_fn, std::vector<std::pair<std::string, Tensor<double>>> leaves, double eps = 1e-5,
                          std::size_t max_per_tensor = 0, std::uint64_t seed = 1, double scale_floor = 1e-6,
                          double kink_tol = 0.0) {
  for (auto& [name, t] : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  double l0;
  {
    auto loss = loss_fn();
    l0 = loss.item();
    backward(loss);
  }
  GradCheckResult res;
  Rng rng(seed);
  for (auto& [name, t] : leaves) {
    const std::vector<double> analytic = t.grad();
    std::vector<std::size_t> idx(t.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_tensor > 0 && idx.size() > max_per_tensor) {
      rng.shuffle(idx);
      idx.resize(max_per_tensor);
    }
    std::vector<double> numeric(idx.size()), spread(idx.size());
    double max_num = scale_floor;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t i = idx[k];
      const double orig = t.data()[i];
      double lp, lm;
      {
        NoGradGuard ng;
        t.data()[i] = orig + eps;
        lp = loss_fn().item();
        t.data()[i] = orig - eps;
        lm = loss_fn().item();
        t.data()[i] = orig;
      }
      numeric[k] = (lp - lm) / (2.0 * eps);
      spread[k] = std::abs((lp - l0) - (l0 - lm)) / eps;
      max_num = std::max(max_num, std::abs(numeric[k]));
    }
    double max_diff = 0.0;
    std::size_t worst_i = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (kink_tol > 0.0 && spread[k] > 2.0 * kink_tol * max_num) {
        ++res.skipped;
        continue;
      }
      const double d = std::abs(numeric[k] - analytic[idx[k]]);
      if (d > max_diff) {
        max_diff = d;
        worst_i = idx[k];
      }
      ++res.checked;
    }
    const double rel = max_diff / max_num;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst = name + "[" + std::to_string(worst_i) + "]";
    }
  }
  return res;
}

}  // namespace svw::ad
