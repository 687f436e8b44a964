#pragma once

// Causal LSTM stack with a gradient highway unit and a zigzag spatial memory.

#include <memory>
#include <vector>

#include "svw/models/forecaster.hpp"

namespace svw {

template <class T>
struct CausalState {
  Tensor<T> h, c;
};

/// (g, i, f) = (tanh, sigmoid, sigmoid)(W1 * [x, h, c])
/// c' = f*c + i*g
/// (g', i', f') = (tanh, sigmoid, sigmoid)(W2 * [x, c', m])
/// m' = f' * tanh(W3 * m) + i' * g'
/// o = tanh(W4 * [x, c', m'])
/// h' = o * tanh(W5 * [c', m'])   (W5 is 1x1)
template <class T>
class CausalLstmCell : public ad::Module<T> {
 public:
  CausalLstmCell(int input, int hidden, int kernel = 3)
      : hid_(hidden),
        w1_(input + 2 * hidden, 3 * hidden, kernel, 1, kernel / 2),
        w2_(input + 2 * hidden, 3 * hidden, kernel, 1, kernel / 2),
        w3_(hidden, hidden, kernel, 1, kernel / 2),
        w4_(input + 2 * hidden, hidden, kernel, 1, kernel / 2),
        w5_(2 * hidden, hidden, 1, 1, 0) {
    this->register_module("w1", w1_);
    this->register_module("w2", w2_);
    this->register_module("w3", w3_);
    this->register_module("w4", w4_);
    this->register_module("w5", w5_);
  }

  void reset(Rng& rng) {
    w1_.reset(rng, ad::gain::sigmoid);
    w2_.reset(rng, ad::gain::sigmoid);
    w3_.reset(rng, ad::gain::tanh);
    w4_.reset(rng, ad::gain::tanh);
    w5_.reset(rng, ad::gain::tanh);
  }

  /// Returns the new (h, c); `m` is replaced by the outgoing spatial memory.
  CausalState<T> step(const Tensor<T>& x, const CausalState<T>& s, Tensor<T>& m) const {
    const int k = hid_;
    const auto z1 = w1_(ad::concat_channels<T>({x, s.h, s.c}));
    const auto g = ad::tanh(ad::slice_channels(z1, 0, k));
    const auto i = ad::sigmoid(ad::slice_channels(z1, k, 2 * k));
    const auto f = ad::sigmoid(ad::slice_channels(z1, 2 * k, 3 * k));
    CausalState<T> out;
    out.c = ad::add(ad::mul(f, s.c), ad::mul(i, g));

    const auto z2 = w2_(ad::concat_channels<T>({x, out.c, m}));
    const auto g2 = ad::tanh(ad::slice_channels(z2, 0, k));
    const auto i2 = ad::sigmoid(ad::slice_channels(z2, k, 2 * k));
    const auto f2 = ad::sigmoid(ad::slice_channels(z2, 2 * k, 3 * k));
    m = ad::add(ad::mul(f2, ad::tanh(w3_(m))), ad::mul(i2, g2));

    const auto o = ad::tanh(w4_(ad::concat_channels<T>({x, out.c, m})));
    out.h = ad::mul(o, ad::tanh(w5_(ad::concat_channels<T>({out.c, m}))));
    return out;
  }

 private:
  int hid_;
  ad::Conv2d<T> w1_, w2_, w3_, w4_, w5_;
};

/// p = tanh(Wp * [x, z]), s = sigmoid(Ws * [x, z]), z' = s*p + (1-s)*z.
template <class T>
class GradientHighwayUnit : public ad::Module<T> {
 public:
  GradientHighwayUnit(int input, int hidden, int kernel = 3)
      : hid_(hidden), w_(input + hidden, 2 * hidden, kernel, 1, kernel / 2) {
    this->register_module("w", w_);
  }

  void reset(Rng& rng) { w_.reset(rng, ad::gain::sigmoid); }

  Tensor<T> step(const Tensor<T>& x, const Tensor<T>& z) const {
    const auto pre = w_(ad::concat_channels<T>({x, z}));
    const auto p = ad::tanh(ad::slice_channels(pre, 0, hid_));
    const auto s = ad::sigmoid(ad::slice_channels(pre, hid_, 2 * hid_));
    return ad::add(ad::mul(s, p), ad::mul(ad::one_minus(s), z));
  }

 private:
  int hid_;
  ad::Conv2d<T> w_;
};

/// Spatial-memory tensors seen at each time step, for wiring checks.
template <class T>
struct MemoryTrace {
  std::vector<Tensor<T>> entering_bottom;
  std::vector<Tensor<T>> leaving_top;
};

template <class T>
class PredRnnPP : public Forecaster<T> {
 public:
  explicit PredRnnPP(ModelConfig cfg) : Forecaster<T>(std::move(cfg)) {
    const auto& c = this->cfg_;
    enc_ch_ = c.channels(8);
    hid_ = c.channels(64);
    const int conv_side = c.frame_size - 2;
    bottom_ = conv_side >= 4 ? (conv_side - 4) / 4 + 1 : 0;
    const int restored = (bottom_ - 1) * 4 + 7;
    output_pad_ = c.frame_size - restored;
    if (bottom_ < 1 || output_pad_ < 0 || output_pad_ >= 4) {
      throw UsageError("predrnnpp: frame_size " + std::to_string(c.frame_size) + " cannot be restored by a k7/s4 deconvolution");
    }
    enc_ = &this->add_module("enc", std::make_unique<ad::Conv2d<T>>(1, enc_ch_, 3, 1, 0));
    build_stack("enc_", encoder_cells_, encoder_ghu_);
    build_stack("fc_", forecaster_cells_, forecaster_ghu_);
    dec_ = &this->add_module("dec", std::make_unique<ad::ConvTranspose2d<T>>(hid_, 1, 7, 4, 0, output_pad_));
    reset(c.init_seed);
  }

  void reset(std::uint64_t seed) {
    Rng rng(seed);
    enc_->reset(rng, ad::gain::linear);
    for (auto* cell : encoder_cells_) cell->reset(rng);
    encoder_ghu_->reset(rng);
    for (auto* cell : forecaster_cells_) cell->reset(rng);
    forecaster_ghu_->reset(rng);
    dec_->reset(rng, ad::gain::linear);
  }

  /// When set, every forward pass records the spatial memory around each step.
  void set_trace(MemoryTrace<T>* trace) { trace_ = trace; }

  Tensor<T> forward(const Tensor<T>& frames) override {
    this->check_input(frames);
    const int b = frames.shape().n, n = this->n_in(), m_out = this->n_out();
    std::vector<Tensor<T>> per_t;
    for (int k = 0; k < n; ++k) per_t.push_back(ad::slice_channels(frames, k, k + 1));
    const auto encoded = encode(n == 1 ? per_t[0] : ad::concat_batch(per_t));

    const Shape hs{b, hid_, bottom_, bottom_};
    std::vector<CausalState<T>> state(encoder_cells_.size(), CausalState<T>{Tensor<T>::zeros(hs), Tensor<T>::zeros(hs)});
    Tensor<T> z = Tensor<T>::zeros(hs);
    Tensor<T> mem = Tensor<T>::zeros(hs);

    for (int k = 0; k < n; ++k) {
      step_stack(encoder_cells_, *encoder_ghu_, ad::batch_slice(encoded, k * b, (k + 1) * b), state, z, mem);
    }
    Tensor<T> x = ad::batch_slice(encoded, (n - 1) * b, n * b);
    std::vector<Tensor<T>> outs;
    for (int j = 0; j < m_out; ++j) {
      const auto top = step_stack(forecaster_cells_, *forecaster_ghu_, x, state, z, mem);
      last_head_input_ = top.detach();
      outs.push_back((*dec_)(top));
      if (j + 1 < m_out) x = encode(outs.back());
    }
    return m_out == 1 ? outs[0] : ad::concat_channels(outs);
  }

  HeadDecomposition<T> decompose_head(int b, int j) const override {
    if (j + 1 != this->n_out()) throw UsageError("predrnnpp: only the last frame of a block can be decomposed");
    return decompose_deconv_head(ad::batch_slice(last_head_input_, b, b + 1), *dec_);
  }

  int hidden_channels() const { return hid_; }
  int bottom_size() const { return bottom_; }

 private:
  void build_stack(const std::string& prefix, std::vector<CausalLstmCell<T>*>& cells, GradientHighwayUnit<T>*& ghu) {
    for (int l = 0; l < this->cfg_.layers(); ++l) {
      cells.push_back(&this->add_module(prefix + "cell" + std::to_string(l),
                                        std::make_unique<CausalLstmCell<T>>(l == 0 ? enc_ch_ : hid_, hid_)));
    }
    ghu = &this->add_module(prefix + "ghu", std::make_unique<GradientHighwayUnit<T>>(hid_, hid_));
  }

  Tensor<T> encode(const Tensor<T>& x) const { return ad::maxpool2d((*enc_)(x), 4, 4); }

  // One time step up the stack; the highway sits between the first two layers.
  Tensor<T> step_stack(const std::vector<CausalLstmCell<T>*>& cells, const GradientHighwayUnit<T>& ghu,
                       const Tensor<T>& x, std::vector<CausalState<T>>& state, Tensor<T>& z, Tensor<T>& mem) {
    if (trace_) trace_->entering_bottom.push_back(mem);
    Tensor<T> in = x;
    for (std::size_t l = 0; l < cells.size(); ++l) {
      state[l] = cells[l]->step(in, state[l], mem);
      in = state[l].h;
      if (l == 0 && cells.size() > 1) {
        z = ghu.step(in, z);
        in = z;
      }
    }
    if (trace_) trace_->leaving_top.push_back(mem);
    return in;
  }

  int enc_ch_ = 0, hid_ = 0, bottom_ = 0, output_pad_ = 0;
  ad::Conv2d<T>* enc_;
  std::vector<CausalLstmCell<T>*> encoder_cells_, forecaster_cells_;
  GradientHighwayUnit<T>* encoder_ghu_ = nullptr;
  GradientHighwayUnit<T>* forecaster_ghu_ = nullptr;
  ad::ConvTranspose2d<T>* dec_;
  Tensor<T> last_head_input_;
  MemoryTrace<T>* trace_ = nullptr;
};

}  // namespace svw
