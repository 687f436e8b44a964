#pragma once

// Parameter containers and the basic layers built on the primitives.

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "svw/ad/ops.hpp"
#include "svw/core/random.hpp"

namespace svw::ad {

/// Activation-dependent gain for Kaiming-uniform initialization.
namespace gain {
inline constexpr double linear = 1.0;
inline constexpr double tanh = 5.0 / 3.0;
inline const double relu = std::sqrt(2.0);
inline const double leaky_relu = std::sqrt(2.0 / (1.0 + 0.2 * 0.2));
inline constexpr double sigmoid = 1.0;
}  // namespace gain

/// Fills `t` from U(-b, b), b = gain * sqrt(3 / fan_in).
template <class T>
void kaiming_uniform(Tensor<T>& t, std::size_t fan_in, double g, Rng& rng) {
  const double bound = g * std::sqrt(3.0 / static_cast<double>(fan_in));
  for (T& x : t.values()) x = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
class Module {
 public:
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;
  virtual ~Module() = default;

  /// Parameters in registration order, names prefixed by the submodule path.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    collect_parameters("", out);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& [name, p] : named_parameters()) out.push_back(p);
    return out;
  }

  /// Non-trainable state (batch-norm running statistics).
  std::vector<std::pair<std::string, std::vector<T>*>> named_buffers() {
    std::vector<std::pair<std::string, std::vector<T>*>> out;
    collect_buffers("", out);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& [name, p] : named_parameters()) n += p.numel();
    return n;
  }

  void train(bool on = true) {
    training_ = on;
    for (auto& [name, m] : children_) m->train(on);
  }
  void eval() { train(false); }
  bool training() const { return training_; }

  void zero_grad() {
    for (auto& p : parameters()) p.zero_grad();
  }

  void set_requires_grad(bool on) {
    for (auto& p : parameters()) p.set_requires_grad(on);
  }

 protected:
  Tensor<T> register_parameter(const std::string& name, Shape s) {
    auto t = Tensor<T>::zeros(s, true);
    params_.push_back({name, t});
    return t;
  }

  std::vector<T>& register_buffer(const std::string& name, std::size_t size, T init) {
    buffers_.push_back({name, std::make_unique<std::vector<T>>(size, init)});
    return *buffers_.back().second;
  }

  /// Registers a child that must outlive this module (usually a member).
  template <class M>
  M& register_module(const std::string& name, M& child) {
    children_.push_back({name, &child});
    return child;
  }

  /// Registers and takes ownership of a child.
  template <class M>
  M& add_module(const std::string& name, std::unique_ptr<M> child) {
    M& ref = *child;
    owned_.push_back(std::move(child));
    children_.push_back({name, &ref});
    return ref;
  }

 private:
  void collect_parameters(const std::string& prefix, std::vector<std::pair<std::string, Tensor<T>>>& out) const {
    for (auto& [name, t] : params_) out.push_back({prefix + name, t});
    for (auto& [name, m] : children_) m->collect_parameters(prefix + name + ".", out);
  }
  void collect_buffers(const std::string& prefix, std::vector<std::pair<std::string, std::vector<T>*>>& out) {
    for (auto& [name, b] : buffers_) out.push_back({prefix + name, b.get()});
    for (auto& [name, m] : children_) m->collect_buffers(prefix + name + ".", out);
  }

  bool training_ = true;
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::pair<std::string, std::unique_ptr<std::vector<T>>>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
  std::vector<std::unique_ptr<Module>> owned_;
};

template <class T>
class Conv2d : public Module<T> {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride = 1, int pad = 0, bool bias = true)
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad) {
    weight = this->register_parameter("weight", {out_ch, in_ch, kernel, kernel});
    if (bias) this->bias = this->register_parameter("bias", {out_ch, 1, 1, 1});
  }

  void reset(Rng& rng, double g) {
    kaiming_uniform(weight, static_cast<std::size_t>(in_ch_) * k_ * k_, g, rng);
    if (bias.defined()) std::fill(bias.values().begin(), bias.values().end(), T(0));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride_, pad_); }

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }

  Tensor<T> weight, bias;

 private:
  int in_ch_, out_ch_, k_, stride_, pad_;
};

template <class T>
class ConvTranspose2d : public Module<T> {
 public:
  ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad = 0, int output_pad = 0, bool bias = true)
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad), output_pad_(output_pad) {
    weight = this->register_parameter("weight", {in_ch, out_ch, kernel, kernel});
    if (bias) this->bias = this->register_parameter("bias", {out_ch, 1, 1, 1});
  }

  void reset(Rng& rng, double g) {
    kaiming_uniform(weight, static_cast<std::size_t>(out_ch_) * k_ * k_, g, rng);
    if (bias.defined()) std::fill(bias.values().begin(), bias.values().end(), T(0));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv_transpose2d(x, weight, bias, stride_, pad_, output_pad_);
  }

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }
  int output_pad() const { return output_pad_; }

  Tensor<T> weight, bias;

 private:
  int in_ch_, out_ch_, k_, stride_, pad_, output_pad_;
};

template <class T>
class Linear : public Module<T> {
 public:
  Linear(int in_features, int out_features, bool bias = true) : in_(in_features) {
    weight = this->register_parameter("weight", {out_features, in_features, 1, 1});
    if (bias) this->bias = this->register_parameter("bias", {out_features, 1, 1, 1});
  }

  void reset(Rng& rng, double g) {
    kaiming_uniform(weight, static_cast<std::size_t>(in_), g, rng);
    if (bias.defined()) std::fill(bias.values().begin(), bias.values().end(), T(0));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  Tensor<T> weight, bias;

 private:
  int in_;
};

template <class T>
class BatchNorm2d : public Module<T> {
 public:
  explicit BatchNorm2d(int channels, double momentum = 0.1, double eps = 1e-5)
      : momentum_(momentum), eps_(eps) {
    gamma = this->register_parameter("gamma", {channels, 1, 1, 1});
    beta = this->register_parameter("beta", {channels, 1, 1, 1});
    std::fill(gamma.values().begin(), gamma.values().end(), T(1));
    running_mean_ = &this->register_buffer("running_mean", channels, T(0));
    running_var_ = &this->register_buffer("running_var", channels, T(1));
  }

  Tensor<T> operator()(const Tensor<T>& x) {
    return batchnorm2d(x, gamma, beta, *running_mean_, *running_var_, this->training(), momentum_, eps_);
  }

  const std::vector<T>& running_mean() const { return *running_mean_; }
  const std::vector<T>& running_var() const { return *running_var_; }

  Tensor<T> gamma, beta;

 private:
  double momentum_, eps_;
  std::vector<T>* running_mean_;
  std::vector<T>* running_var_;
};

}  // namespace svw::ad
