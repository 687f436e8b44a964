#pragma once

// U-Net taking N frames as channels and emitting M frames in one pass.

#include <memory>
#include <vector>

#include "svw/models/forecaster.hpp"

namespace svw {

template <class T>
class UNet : public Forecaster<T> {
 public:
  static constexpr int kLevels = 4;

  explicit UNet(ModelConfig cfg) : Forecaster<T>(std::move(cfg)) {
    const auto& c = this->cfg_;
    if (c.frame_size % 8 != 0) {
      throw UsageError("unet: frame_size " + std::to_string(c.frame_size) + " must be a multiple of 8");
    }
    for (int l = 0; l < kLevels; ++l) ch_.push_back(c.channels(64 << l));
    int in = c.n_in;
    for (int l = 0; l < kLevels; ++l) {
      down_.push_back(block("down" + std::to_string(l), in, ch_[l]));
      in = ch_[l];
    }
    for (int s = 0; s < kLevels - 1; ++s) {
      const int skip = ch_[kLevels - 2 - s];
      up_in_.push_back(in + skip);
      up_.push_back(block("up" + std::to_string(s), in + skip, skip));
      in = skip;
    }
    head_ = &this->add_module("head", std::make_unique<ad::Conv2d<T>>(in, c.n_out, 1, 1, 0));
    reset(c.init_seed);
  }

  void reset(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& b : down_) {
      b.first->reset(rng, ad::gain::relu);
      b.second->reset(rng, ad::gain::relu);
    }
    for (auto& b : up_) {
      b.first->reset(rng, ad::gain::relu);
      b.second->reset(rng, ad::gain::relu);
    }
    head_->reset(rng, ad::gain::linear);
  }

  /// Input channels of each decoder stage (upsampled + skip).
  const std::vector<int>& decoder_input_channels() const { return up_in_; }
  const std::vector<int>& encoder_channels() const { return ch_; }

  Tensor<T> forward(const Tensor<T>& frames) override {
    this->check_input(frames);
    std::vector<Tensor<T>> skips;
    Tensor<T> x = frames;
    for (int l = 0; l < kLevels; ++l) {
      x = apply(down_[l], x);
      if (l + 1 < kLevels) {
        skips.push_back(x);
        x = ad::maxpool2d(x, 2, 2);
      }
    }
    for (int s = 0; s < kLevels - 1; ++s) {
      x = ad::upsample_bilinear2x(x);
      x = ad::concat_channels<T>({x, skips[kLevels - 2 - s]});
      x = apply(up_[s], x);
    }
    last_features_ = x.detach();
    return (*head_)(x);
  }

  /// Output of the contracting path (bottleneck features).
  Tensor<T> encode(const Tensor<T>& frames) {
    this->check_input(frames);
    Tensor<T> x = frames;
    for (int l = 0; l < kLevels; ++l) {
      x = apply(down_[l], x);
      if (l + 1 < kLevels) x = ad::maxpool2d(x, 2, 2);
    }
    return x;
  }

  /// Parameters of the contracting path.
  std::vector<Tensor<T>> encoder_parameters() const {
    std::vector<Tensor<T>> out;
    for (const auto& b : down_) {
      for (auto* conv : {b.first, b.second}) {
        out.push_back(conv->weight);
        out.push_back(conv->bias);
      }
    }
    return out;
  }

  HeadDecomposition<T> decompose_head(int b, int j) const override {
    const Shape& s = last_features_.shape();
    HeadDecomposition<T> d;
    d.height = s.h;
    d.width = s.w;
    const std::size_t hw = s.hw();
    for (int c = 0; c < s.c; ++c) {
      const double w = head_->weight.values()[static_cast<std::size_t>(j) * s.c + c];
      const T* f = last_features_.data() + (static_cast<std::size_t>(b) * s.c + c) * hw;
      std::vector<double> map(hw);
      for (std::size_t i = 0; i < hw; ++i) map[i] = w * static_cast<double>(f[i]);
      d.contributions.push_back(std::move(map));
      d.weight_magnitude.push_back(std::abs(w));
    }
    d.bias_map.assign(hw, static_cast<double>(head_->bias.values()[j]));
    return d;
  }

 private:
  using Block = std::pair<ad::Conv2d<T>*, ad::Conv2d<T>*>;

  Block block(const std::string& name, int in, int out) {
    auto* a = &this->add_module(name + "a", std::make_unique<ad::Conv2d<T>>(in, out, 3, 1, 1));
    auto* b = &this->add_module(name + "b", std::make_unique<ad::Conv2d<T>>(out, out, 3, 1, 1));
    return {a, b};
  }

  static Tensor<T> apply(const Block& b, const Tensor<T>& x) { return ad::relu((*b.second)(ad::relu((*b.first)(x)))); }

  std::vector<int> ch_, up_in_;
  std::vector<Block> down_, up_;
  ad::Conv2d<T>* head_;
  Tensor<T> last_features_;
};

}  // namespace svw
