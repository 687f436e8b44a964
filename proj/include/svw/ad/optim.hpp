#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "svw/ad/tensor.hpp"
#include "svw/core/error.hpp"

namespace svw::ad {

/// Adam with bias correction.
template <class T>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<T>> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  /// Applies one update from the accumulated gradients.
  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      const auto& g = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      T* x = p.data();
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double gi = g[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        x[i] = static_cast<T>(x[i] - lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  long step_count() const { return t_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }
  const std::vector<Tensor<T>>& params() const { return params_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Reduce-on-plateau learning rate: once more than `patience` consecutive
/// evaluations fail to improve on the best value, lr is multiplied by `factor`.
struct LrSchedule {
  double lr = 1e-3;
  double factor = 1e-2;
  int patience = 5;
  double best_val = std::numeric_limits<double>::infinity();
  int epochs_since_best = 0;

  LrSchedule() = default;
  LrSchedule(double lr_, int patience_, double factor_ = 1e-2) : lr(lr_), factor(factor_), patience(patience_) {
    if (!(lr > 0.0)) throw UsageError("lr must be > 0");
    if (!(factor > 0.0 && factor < 1.0)) throw UsageError("lr factor must be in (0, 1)");
    if (patience < 0) throw UsageError("patience must be >= 0");
  }

  /// Returns true when the learning rate was reduced.
  bool update(double val_error) {
    if (val_error < best_val) {
      best_val = val_error;
      epochs_since_best = 0;
      return false;
    }
    if (++epochs_since_best > patience) {
      lr *= factor;
      epochs_since_best = 0;
      return true;
    }
    return false;
  }
};

}  // namespace svw::ad
