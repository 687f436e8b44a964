#pragma once

// Encoder-forecaster ConvLSTM stack between a strided convolutional encoder and
// a transposed-convolution decoder.

#include <memory>
#include <vector>

#include "svw/models/forecaster.hpp"

namespace svw {

template <class T>
struct ConvLstmState {
  Tensor<T> h, c;
};

/// i, f, o = sigmoid(conv([x, h])), g = tanh(conv([x, h])),
/// c' = f*c + i*g, h' = o*tanh(c').
template <class T>
class ConvLstmCell : public ad::Module<T> {
 public:
  ConvLstmCell(int input, int hidden, int kernel = 3)
      : hidden_(hidden), gates_(input + hidden, 4 * hidden, kernel, 1, kernel / 2) {
    this->register_module("gates", gates_);
  }

  void reset(Rng& rng) { gates_.reset(rng, ad::gain::sigmoid); }
  int hidden() const { return hidden_; }

  ConvLstmState<T> step(const Tensor<T>& x, const ConvLstmState<T>& s) const {
    const auto z = gates_(ad::concat_channels<T>({x, s.h}));
    const auto i = ad::sigmoid(ad::slice_channels(z, 0, hidden_));
    const auto f = ad::sigmoid(ad::slice_channels(z, hidden_, 2 * hidden_));
    const auto o = ad::sigmoid(ad::slice_channels(z, 2 * hidden_, 3 * hidden_));
    const auto g = ad::tanh(ad::slice_channels(z, 3 * hidden_, 4 * hidden_));
    ConvLstmState<T> out;
    out.c = ad::add(ad::mul(f, s.c), ad::mul(i, g));
    out.h = ad::mul(o, ad::tanh(out.c));
    return out;
  }

 private:
  int hidden_;
  ad::Conv2d<T> gates_;
};

template <class T>
class ConvLstmModel : public Forecaster<T> {
 public:
  explicit ConvLstmModel(ModelConfig cfg) : Forecaster<T>(std::move(cfg)) {
    const auto& c = this->cfg_;
    ch_ = {c.channels(8), c.channels(64), c.channels(192)};
    int side = c.frame_size, in = 1;
    for (int l = 0; l < 3; ++l) {
      side = (side + 2 - 3) / 2 + 1;
      enc_.push_back(&this->add_module("enc" + std::to_string(l), std::make_unique<ad::Conv2d<T>>(in, ch_[l], 3, 2, 1)));
      in = ch_[l];
    }
    bottom_ = side;
    if (bottom_ * 8 != c.frame_size) {
      throw UsageError("convlstm: frame_size " + std::to_string(c.frame_size) + " must be a multiple of 8");
    }
    const int hid = ch_[2];
    for (int l = 0; l < c.layers(); ++l) {
      encoder_cells_.push_back(&this->add_module("enc_cell" + std::to_string(l),
                                                 std::make_unique<ConvLstmCell<T>>(l == 0 ? ch_[2] : hid, hid)));
    }
    for (int l = 0; l < c.layers(); ++l) {
      forecaster_cells_.push_back(&this->add_module("fc_cell" + std::to_string(l),
                                                    std::make_unique<ConvLstmCell<T>>(l == 0 ? ch_[2] : hid, hid)));
    }
    const int outs[3] = {ch_[1], ch_[0], 1};
    in = hid;
    for (int l = 0; l < 3; ++l) {
      dec_.push_back(&this->add_module("dec" + std::to_string(l),
                                       std::make_unique<ad::ConvTranspose2d<T>>(in, outs[l], 3, 2, 1, 1)));
      in = outs[l];
    }
    reset(c.init_seed);
  }

  void reset(std::uint64_t seed) {
    Rng rng(seed);
    for (auto* e : enc_) e->reset(rng, ad::gain::leaky_relu);
    for (auto* cell : encoder_cells_) cell->reset(rng);
    for (auto* cell : forecaster_cells_) cell->reset(rng);
    for (std::size_t l = 0; l < dec_.size(); ++l) {
      dec_[l]->reset(rng, l + 1 < dec_.size() ? ad::gain::leaky_relu : ad::gain::linear);
    }
  }

  Tensor<T> forward(const Tensor<T>& frames) override {
    this->check_input(frames);
    const int b = frames.shape().n, n = this->n_in(), m = this->n_out();
    std::vector<Tensor<T>> per_t;
    for (int k = 0; k < n; ++k) per_t.push_back(ad::slice_channels(frames, k, k + 1));
    const auto encoded = encode(n == 1 ? per_t[0] : ad::concat_batch(per_t));

    const int hid = ch_[2];
    std::vector<ConvLstmState<T>> state(encoder_cells_.size());
    for (auto& s : state) {
      s.h = Tensor<T>::zeros({b, hid, bottom_, bottom_});
      s.c = Tensor<T>::zeros({b, hid, bottom_, bottom_});
    }
    for (int k = 0; k < n; ++k) {
      Tensor<T> x = ad::batch_slice(encoded, k * b, (k + 1) * b);
      for (std::size_t l = 0; l < encoder_cells_.size(); ++l) {
        state[l] = encoder_cells_[l]->step(x, state[l]);
        x = state[l].h;
      }
    }
    // The forecaster starts from the encoder states and is driven by the
    // encoding of the most recent frame (last input, then its own outputs).
    Tensor<T> x = ad::batch_slice(encoded, (n - 1) * b, n * b);
    std::vector<Tensor<T>> outs;
    for (int j = 0; j < m; ++j) {
      Tensor<T> y = x;
      for (std::size_t l = 0; l < forecaster_cells_.size(); ++l) {
        state[l] = forecaster_cells_[l]->step(y, state[l]);
        y = state[l].h;
      }
      outs.push_back(decode(y));
      if (j + 1 < m) x = encode(outs.back());
    }
    return m == 1 ? outs[0] : ad::concat_channels(outs);
  }

  HeadDecomposition<T> decompose_head(int b, int j) const override {
    if (j + 1 != this->n_out()) throw UsageError("convlstm: only the last frame of a block can be decomposed");
    return decompose_deconv_head(ad::batch_slice(last_head_input_, b, b + 1), *dec_.back());
  }

 private:
  Tensor<T> encode(Tensor<T> x) const {
    for (auto* e : enc_) x = ad::leaky_relu((*e)(x), T(0.2));
    return x;
  }

  Tensor<T> decode(Tensor<T> x) {
    for (std::size_t l = 0; l < dec_.size(); ++l) {
      if (l + 1 == dec_.size()) last_head_input_ = x.detach();
      x = (*dec_[l])(x);
      if (l + 1 < dec_.size()) x = ad::leaky_relu(x, T(0.2));
    }
    return x;
  }

  std::vector<int> ch_;
  int bottom_ = 0;
  std::vector<ad::Conv2d<T>*> enc_;
  std::vector<ConvLstmCell<T>*> encoder_cells_, forecaster_cells_;
  std::vector<ad::ConvTranspose2d<T>*> dec_;
  Tensor<T> last_head_input_;
};

}  // namespace svw
