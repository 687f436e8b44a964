#pragma once

// Convolutional encoder, three vector LSTMs with split roles, deconvolutional decoder.

#include <memory>
#include <vector>

#include "svw/models/forecaster.hpp"

namespace svw {

template <class T>
class VectorLstmCell : public ad::Module<T> {
 public:
  VectorLstmCell(int input, int hidden) : hidden_(hidden), gates_(input + hidden, 4 * hidden) {
    this->register_module("gates", gates_);
  }

  void reset(Rng& rng) { gates_.reset(rng, ad::gain::sigmoid); }

  /// One step; h and c are (b, hidden, 1, 1) and are replaced.
  void step(const Tensor<T>& x, Tensor<T>& h, Tensor<T>& c) const {
    const auto z = gates_(ad::concat_channels<T>({x, h}));
    const auto i = ad::sigmoid(ad::slice_channels(z, 0, hidden_));
    const auto f = ad::sigmoid(ad::slice_channels(z, hidden_, 2 * hidden_));
    const auto o = ad::sigmoid(ad::slice_channels(z, 2 * hidden_, 3 * hidden_));
    const auto g = ad::tanh(ad::slice_channels(z, 3 * hidden_, 4 * hidden_));
    c = ad::add(ad::mul(f, c), ad::mul(i, g));
    h = ad::mul(o, ad::tanh(c));
  }

 private:
  int hidden_;
  ad::Linear<T> gates_;
};

template <class T>
class LstmBaseline : public Forecaster<T> {
 public:
  explicit LstmBaseline(ModelConfig cfg) : Forecaster<T>(std::move(cfg)), rng_(0) {
    const auto& c = this->cfg_;
    const int f = c.frame_size;
    ch_ = {c.channels(60), c.channels(120), c.channels(240), c.channels(480)};
    const int kernels[4] = {7, 3, 3, 3}, pads[4] = {2, 1, 1, 1};
    int side = f, in = 1;
    for (int l = 0; l < 4; ++l) {
      side = (side + 2 * pads[l] - kernels[l]) / 2 + 1;
      if (side < 1) throw UsageError("lstm_baseline: frame_size " + std::to_string(f) + " too small");
      enc_.push_back(&this->add_module("enc" + std::to_string(l),
                                       std::make_unique<ad::Conv2d<T>>(in, ch_[l], kernels[l], 2, pads[l])));
      enc_bn_.push_back(&this->add_module("enc_bn" + std::to_string(l), std::make_unique<ad::BatchNorm2d<T>>(ch_[l])));
      in = ch_[l];
    }
    bottom_ = side;
    if (bottom_ * 16 != f) {
      throw UsageError("lstm_baseline: frame_size " + std::to_string(f) +
                       " is incompatible with the stride-2 pyramid (encoder ends at " + std::to_string(bottom_) + ")");
    }
    const int flat = ch_[3] * bottom_ * bottom_;
    const int L = c.latent();
    enc_fc_ = &this->add_module("enc_fc", std::make_unique<ad::Linear<T>>(flat, L));
    for (int k = 0; k < 3; ++k) {
      lstm_.push_back(&this->add_module("lstm" + std::to_string(k + 1), std::make_unique<VectorLstmCell<T>>(L, L)));
    }
    dec_fc_ = &this->add_module("dec_fc", std::make_unique<ad::Linear<T>>(L, flat));
    const int outs[4] = {ch_[2], ch_[1], ch_[0], 1};
    in = ch_[3];
    for (int l = 0; l < 4; ++l) {
      dec_.push_back(&this->add_module("dec" + std::to_string(l),
                                       std::make_unique<ad::ConvTranspose2d<T>>(in, outs[l], 3, 2, 1, 1)));
      if (l < 3) {
        dec_bn_.push_back(&this->add_module("dec_bn" + std::to_string(l), std::make_unique<ad::BatchNorm2d<T>>(outs[l])));
      }
      in = outs[l];
    }
    reset(c.init_seed);
  }

  void reset(std::uint64_t seed) {
    Rng rng(seed);
    for (auto* e : enc_) e->reset(rng, ad::gain::tanh);
    enc_fc_->reset(rng, ad::gain::linear);
    for (auto* l : lstm_) l->reset(rng);
    dec_fc_->reset(rng, ad::gain::tanh);
    for (std::size_t l = 0; l < dec_.size(); ++l) dec_[l]->reset(rng, l + 1 < dec_.size() ? ad::gain::tanh : ad::gain::linear);
    rng_ = Rng(child_seed(seed, 1));
  }

  void reseed(std::uint64_t seed) override { rng_ = Rng(seed); }

  /// Output index (1-based) emitted by the mid-horizon LSTM.
  int mid_index() const { return (this->n_out() + 1) / 2; }

  Tensor<T> forward(const Tensor<T>& frames) override {
    this->check_input(frames);
    const int b = frames.shape().n, n = this->n_in(), m = this->n_out();
    const int L = this->cfg_.latent();

    // Encode all inputs in one batch, time-major.
    std::vector<Tensor<T>> per_t;
    for (int k = 0; k < n; ++k) per_t.push_back(ad::slice_channels(frames, k, k + 1));
    const auto z = encode(n == 1 ? per_t[0] : ad::concat_batch(per_t));

    auto h = Tensor<T>::zeros({b, L, 1, 1});
    auto c = Tensor<T>::zeros({b, L, 1, 1});
    // Inputs 1..N-1 only update the state; input N produces output 1.
    for (int k = 0; k + 1 < n; ++k) {
      const auto& cell = k == 0 ? *lstm_[0] : *lstm_[2];
      cell.step(ad::batch_slice(z, k * b, (k + 1) * b), h, c);
    }
    std::vector<Tensor<T>> hidden;
    Tensor<T> x = ad::batch_slice(z, (n - 1) * b, n * b);
    for (int j = 1; j <= m; ++j) {
      const auto& cell = (j == mid_index()) ? *lstm_[1] : (n == 1 && j == 1) ? *lstm_[0] : *lstm_[2];
      cell.step(x, h, c);
      hidden.push_back(h);
      x = h;
    }
    const auto decoded = decode(m == 1 ? hidden[0] : ad::concat_batch(hidden));  // (m*b, 1, F, F)
    if (m == 1) return decoded;
    std::vector<Tensor<T>> outs;
    for (int j = 0; j < m; ++j) outs.push_back(ad::batch_slice(decoded, j * b, (j + 1) * b));
    return ad::concat_channels(outs);
  }

  HeadDecomposition<T> decompose_head(int b, int j) const override {
    const int batch = last_head_input_.shape().n / this->n_out();
    return decompose_deconv_head(ad::batch_slice(last_head_input_, j * batch + b, j * batch + b + 1), *dec_.back());
  }

 private:
  Tensor<T> encode(Tensor<T> x) {
    for (std::size_t l = 0; l < enc_.size(); ++l) {
      x = ad::tanh((*enc_bn_[l])((*enc_[l])(x)));
      if (l + 1 == enc_.size()) x = ad::dropout(x, 0.25, this->training(), rng_);
    }
    return (*enc_fc_)(ad::reshape(x, {x.shape().n, static_cast<int>(x.shape().chw()), 1, 1}));
  }

  Tensor<T> decode(const Tensor<T>& h) {
    auto x = ad::reshape((*dec_fc_)(h), {h.shape().n, ch_[3], bottom_, bottom_});
    for (std::size_t l = 0; l < dec_.size(); ++l) {
      if (l + 1 == dec_.size()) last_head_input_ = x.detach();
      x = (*dec_[l])(x);
      if (l < dec_bn_.size()) x = ad::tanh((*dec_bn_[l])(x));
    }
    return x;
  }

  std::vector<int> ch_;
  int bottom_ = 0;
  std::vector<ad::Conv2d<T>*> enc_;
  std::vector<ad::BatchNorm2d<T>*> enc_bn_;
  ad::Linear<T>* enc_fc_;
  std::vector<VectorLstmCell<T>*> lstm_;
  ad::Linear<T>* dec_fc_;
  std::vector<ad::ConvTranspose2d<T>*> dec_;
  std::vector<ad::BatchNorm2d<T>*> dec_bn_;
  Tensor<T> last_head_input_;
  Rng rng_;
};

}  // namespace svw
