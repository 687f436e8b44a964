#pragma once

// Differentiable primitives. Convolutions lower to im2col + GEMM (Eigen).

#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "svw/ad/tensor.hpp"
#include "svw/core/random.hpp"

namespace svw::ad {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  int n, c, h, w;  // input geometry of the (forward) convolution
  int k, stride, pad;
  int ho, wo;
  std::size_t rows() const { return static_cast<std::size_t>(c) * k * k; }
  std::size_t cols() const { return static_cast<std::size_t>(n) * ho * wo; }
};

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// cols[(ci,ki,kj), (n,oy,ox)] = x[n, ci, oy*s - p + ki, ox*s - p + kj] (zero outside).
template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t ncols = g.cols();
  const std::size_t plane = static_cast<std::size_t>(g.ho) * g.wo;
  for (int ci = 0; ci < g.c; ++ci)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        T* row = cols + ((static_cast<std::size_t>(ci) * g.k + ki) * g.k + kj) * ncols;
        for (int n = 0; n < g.n; ++n) {
          const T* src = x + (static_cast<std::size_t>(n) * g.c + ci) * g.h * g.w;
          T* dst = row + n * plane;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ki;
            T* drow = dst + static_cast<std::size_t>(oy) * g.wo;
            if (iy < 0 || iy >= g.h) {
              std::fill(drow, drow + g.wo, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(iy) * g.w;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kj;
              drow[ox] = (ix >= 0 && ix < g.w) ? srow[ix] : T(0);
            }
          }
        }
      }
}

// Adjoint of im2col: scatters-adds columns back into x.
template <class T>
void col2im(const T* cols, const ConvGeom& g, T* x) {
  const std::size_t ncols = g.cols();
  const std::size_t plane = static_cast<std::size_t>(g.ho) * g.wo;
  for (int ci = 0; ci < g.c; ++ci)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        const T* row = cols + ((static_cast<std::size_t>(ci) * g.k + ki) * g.k + kj) * ncols;
        for (int n = 0; n < g.n; ++n) {
          T* dst = x + (static_cast<std::size_t>(n) * g.c + ci) * g.h * g.w;
          const T* src = row + n * plane;
          for (int oy = 0; oy < g.ho; ++oy) {
            const int iy = oy * g.stride - g.pad + ki;
            if (iy < 0 || iy >= g.h) continue;
            T* drow = dst + static_cast<std::size_t>(iy) * g.w;
            const T* srow = src + static_cast<std::size_t>(oy) * g.wo;
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kj;
              if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
            }
          }
        }
      }
}

// (n, c, hw) -> (c, n*hw)
template <class T>
void nchw_to_cn(const T* x, int n, int c, std::size_t hw, T* out) {
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const T* src = x + (static_cast<std::size_t>(b) * c + ch) * hw;
      std::copy(src, src + hw, out + (static_cast<std::size_t>(ch) * n + b) * hw);
    }
}

// (c, n*hw) -> (n, c, hw), optionally accumulating.
template <class T>
void cn_to_nchw(const T* x, int n, int c, std::size_t hw, T* out, bool accumulate = false) {
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const T* src = x + (static_cast<std::size_t>(ch) * n + b) * hw;
      T* dst = out + (static_cast<std::size_t>(b) * c + ch) * hw;
      if (accumulate) {
        for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
      } else {
        std::copy(src, src + hw, dst);
      }
    }
}

template <class Fwd, class Bwd, class T>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Bwd dfdx_from_xy) {
  std::vector<T> y(x.numel());
  const T* xs = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(xs[i]);
  auto out = make_result<T>(x.shape(), {x}, std::move(y));
  on_backward(out, [o = out.node(), p = x.node(), dfdx_from_xy] {
    T* gx = p->grad_data();
    const T* go = o->grad.data();
    const T* xv = p->value.data();
    const T* yv = o->value.data();
    for (std::size_t i = 0; i < o->value.size(); ++i) gx[i] += go[i] * dfdx_from_xy(xv[i], yv[i]);
  });
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  auto out = make_result<T>(a.shape(), {a, b}, std::move(y));
  on_backward(out, [o = out.node(), pa = a.node(), pb = b.node()] {
    const T* g = o->grad.data();
    for (Node<T>* p : {pa, pb}) {
      if (!p->requires_grad) continue;
      T* gp = p->grad_data();
      for (std::size_t i = 0; i < o->value.size(); ++i) gp[i] += g[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  auto out = make_result<T>(a.shape(), {a, b}, std::move(y));
  on_backward(out, [o = out.node(), pa = a.node(), pb = b.node()] {
    const T* g = o->grad.data();
    if (pa->requires_grad) {
      T* ga = pa->grad_data();
      for (std::size_t i = 0; i < o->value.size(); ++i) ga[i] += g[i];
    }
    if (pb->requires_grad) {
      T* gb = pb->grad_data();
      for (std::size_t i = 0; i < o->value.size(); ++i) gb[i] -= g[i];
    }
  });
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  auto out = make_result<T>(a.shape(), {a, b}, std::move(y));
  on_backward(out, [o = out.node(), pa = a.node(), pb = b.node()] {
    const T* g = o->grad.data();
    if (pa->requires_grad) {
      T* ga = pa->grad_data();
      for (std::size_t i = 0; i < o->value.size(); ++i) ga[i] += g[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      T* gb = pb->grad_data();
      for (std::size_t i = 0; i < o->value.size(); ++i) gb[i] += g[i] * pa->value[i];
    }
  });
  return out;
}

/// scale * x + shift
template <class T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
  return detail::unary(x, [=](T v) { return scale * v + shift; }, [=](T, T) { return scale; });
}

template <class T>
Tensor<T> one_minus(const Tensor<T>& x) {
  return affine(x, T(-1), T(1));
}

template <class T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  return detail::unary(
      x, [=](T v) { return v > T(0) ? v : slope * v; }, [=](T v, T) { return v > T(0) ? T(1) : slope; });
}

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape s) {
  if (s.numel() != x.numel()) throw ShapeError("reshape: " + x.shape().str() + " to " + s.str());
  auto out = make_result<T>(s, {x}, x.values());
  on_backward(out, [o = out.node(), p = x.node()] {
    T* g = p->grad_data();
    for (std::size_t i = 0; i < o->value.size(); ++i) g[i] += o->grad[i];
  });
  return out;
}

/// Concatenation along the channel axis.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  Shape s = xs[0].shape();
  s.c = 0;
  for (const auto& x : xs) {
    const auto& xs_ = x.shape();
    if (xs_.n != xs[0].shape().n || xs_.h != xs[0].shape().h || xs_.w != xs[0].shape().w) {
      throw ShapeError("concat: shape mismatch " + xs[0].shape().str() + " vs " + xs_.str());
    }
    s.c += xs_.c;
  }
  std::vector<T> y(s.numel());
  const std::size_t hw = s.hw();
  int offset = 0;
  for (const auto& x : xs) {
    const int c = x.shape().c;
    for (int b = 0; b < s.n; ++b) {
      const T* src = x.data() + static_cast<std::size_t>(b) * c * hw;
      std::copy(src, src + c * hw, y.data() + (static_cast<std::size_t>(b) * s.c + offset) * hw);
    }
    offset += c;
  }
  auto out = make_result<T>(s, xs, std::move(y));
  std::vector<Node<T>*> parents;
  for (const auto& x : xs) parents.push_back(x.node());
  on_backward(out, [o = out.node(), parents] {
    const Shape& s = o->shape;
    const std::size_t hw = s.hw();
    int offset = 0;
    for (Node<T>* p : parents) {
      const int c = p->shape.c;
      if (p->requires_grad) {
        T* g = p->grad_data();
        for (int b = 0; b < s.n; ++b) {
          const T* src = o->grad.data() + (static_cast<std::size_t>(b) * s.c + offset) * hw;
          T* dst = g + static_cast<std::size_t>(b) * c * hw;
          for (std::size_t i = 0; i < c * hw; ++i) dst[i] += src[i];
        }
      }
      offset += c;
    }
  });
  return out;
}

/// Channels [c0, c1).
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
  const Shape& in = x.shape();
  if (c0 < 0 || c1 > in.c || c0 >= c1) {
    throw ShapeError("slice_channels: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " + in.str());
  }
  Shape s{in.n, c1 - c0, in.h, in.w};
  const std::size_t hw = in.hw();
  std::vector<T> y(s.numel());
  for (int b = 0; b < in.n; ++b) {
    const T* src = x.data() + (static_cast<std::size_t>(b) * in.c + c0) * hw;
    std::copy(src, src + s.c * hw, y.data() + static_cast<std::size_t>(b) * s.c * hw);
  }
  auto out = make_result<T>(s, {x}, std::move(y));
  on_backward(out, [o = out.node(), p = x.node(), c0] {
    const Shape& in = p->shape;
    const Shape& s = o->shape;
    const std::size_t hw = in.hw();
    T* g = p->grad_data();
    for (int b = 0; b < in.n; ++b) {
      T* dst = g + (static_cast<std::size_t>(b) * in.c + c0) * hw;
      const T* src = o->grad.data() + static_cast<std::size_t>(b) * s.c * hw;
      for (std::size_t i = 0; i < s.c * hw; ++i) dst[i] += src[i];
    }
  });
  return out;
}

/// Concatenation along the batch axis.
template <class T>
Tensor<T> concat_batch(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_batch: no inputs");
  Shape s = xs[0].shape();
  s.n = 0;
  for (const auto& x : xs) {
    const auto& xs_ = x.shape();
    if (xs_.c != s.c || xs_.h != s.h || xs_.w != s.w) {
      throw ShapeError("concat_batch: shape mismatch " + xs[0].shape().str() + " vs " + xs_.str());
    }
    s.n += xs_.n;
  }
  std::vector<T> y;
  y.reserve(s.numel());
  for (const auto& x : xs) y.insert(y.end(), x.values().begin(), x.values().end());
  auto out = make_result<T>(s, xs, std::move(y));
  std::vector<Node<T>*> parents;
  for (const auto& x : xs) parents.push_back(x.node());
  on_backward(out, [o = out.node(), parents] {
    std::size_t offset = 0;
    for (Node<T>* p : parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        T* g = p->grad_data();
        for (std::size_t i = 0; i < n; ++i) g[i] += o->grad[offset + i];
      }
      offset += n;
    }
  });
  return out;
}

/// Samples [n0, n1) of the batch.
template <class T>
Tensor<T> batch_slice(const Tensor<T>& x, int n0, int n1) {
  const Shape& in = x.shape();
  if (n0 < 0 || n1 > in.n || n0 >= n1) {
    throw ShapeError("batch_slice: [" + std::to_string(n0) + "," + std::to_string(n1) + ") of " + in.str());
  }
  const std::size_t chw = in.chw();
  std::vector<T> y(x.values().begin() + n0 * chw, x.values().begin() + n1 * chw);
  auto out = make_result<T>({n1 - n0, in.c, in.h, in.w}, {x}, std::move(y));
  on_backward(out, [o = out.node(), p = x.node(), offset = n0 * chw] {
    T* g = p->grad_data() + offset;
    for (std::size_t i = 0; i < o->value.size(); ++i) g[i] += o->grad[i];
  });
  return out;
}

/// Global average over height and width: (n,c,h,w) -> (n,c,1,1).
template <class T>
Tensor<T> mean_hw(const Tensor<T>& x) {
  const Shape& in = x.shape();
  const std::size_t hw = in.hw();
  std::vector<T> y(static_cast<std::size_t>(in.n) * in.c);
  for (std::size_t i = 0; i < y.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < hw; ++j) acc += x.data()[i * hw + j];
    y[i] = static_cast<T>(acc / hw);
  }
  auto out = make_result<T>({in.n, in.c, 1, 1}, {x}, std::move(y));
  on_backward(out, [o = out.node(), p = x.node()] {
    const std::size_t hw = p->shape.hw();
    T* g = p->grad_data();
    for (std::size_t i = 0; i < o->value.size(); ++i) {
      const T gi = o->grad[i] / static_cast<T>(hw);
      for (std::size_t j = 0; j < hw; ++j) g[i * hw + j] += gi;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

/// x (n,ci,h,w), weight (co,ci,k,k), bias (co) or undefined.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int pad) {
  using namespace detail;
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) throw ShapeError("conv2d: input " + xs.str() + " vs weight " + ws.str());
  if (bias.defined() && static_cast<int>(bias.numel()) != ws.n) {
    throw ShapeError("conv2d: bias " + bias.shape().str() + " vs weight " + ws.str());
  }
  const int k = ws.h;
  ConvGeom g{xs.n, xs.c, xs.h, xs.w, k, stride, pad, conv_out(xs.h, k, stride, pad), conv_out(xs.w, k, stride, pad)};
  if (g.ho < 1 || g.wo < 1) throw ShapeError("conv2d: kernel larger than padded input " + xs.str());
  const int co = ws.n;
  const std::size_t plane = static_cast<std::size_t>(g.ho) * g.wo;

  auto cols = std::make_shared<std::vector<T>>(g.rows() * g.cols());
  im2col(x.data(), g, cols->data());
  std::vector<T> ycn(static_cast<std::size_t>(co) * g.cols());
  MatMap<T>(ycn.data(), co, g.cols()).noalias() =
      ConstMatMap<T>(weight.data(), co, g.rows()) * ConstMatMap<T>(cols->data(), g.rows(), g.cols());
  if (bias.defined()) {
    for (int c = 0; c < co; ++c) {
      T* row = ycn.data() + static_cast<std::size_t>(c) * g.cols();
      const T b = bias.data()[c];
      for (std::size_t i = 0; i < g.cols(); ++i) row[i] += b;
    }
  }
  std::vector<T> y(static_cast<std::size_t>(xs.n) * co * plane);
  cn_to_nchw(ycn.data(), xs.n, co, plane, y.data());

  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  auto out = make_result<T>({xs.n, co, g.ho, g.wo}, inputs, std::move(y));
  on_backward(out, [o = out.node(), px = x.node(), pw = weight.node(), pb = bias.defined() ? bias.node() : nullptr,
                    g, co, plane, cols] {
    std::vector<T> gcn(static_cast<std::size_t>(co) * g.cols());
    nchw_to_cn(o->grad.data(), g.n, co, plane, gcn.data());
    ConstMatMap<T> G(gcn.data(), co, g.cols());
    if (pw->requires_grad) {
      MatMap<T>(pw->grad_data(), co, g.rows()).noalias() += G * ConstMatMap<T>(cols->data(), g.rows(), g.cols()).transpose();
    }
    if (pb && pb->requires_grad) {
      T* gb = pb->grad_data();
      for (int c = 0; c < co; ++c) {
        double acc = 0.0;
        const T* row = gcn.data() + static_cast<std::size_t>(c) * g.cols();
        for (std::size_t i = 0; i < g.cols(); ++i) acc += row[i];
        gb[c] += static_cast<T>(acc);
      }
    }
    if (px->requires_grad) {
      std::vector<T> dcols(g.rows() * g.cols());
      MatMap<T>(dcols.data(), g.rows(), g.cols()).noalias() = ConstMatMap<T>(pw->value.data(), co, g.rows()).transpose() * G;
      col2im(dcols.data(), g, px->grad_data());
    }
  });
  return out;
}

/// x (n,ci,h,w), weight (ci,co,k,k), bias (co) or undefined.
/// Output side: (h-1)*stride - 2*pad + k + output_pad.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int pad,
                           int output_pad = 0) {
  using namespace detail;
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.n != xs.c || ws.h != ws.w) {
    throw ShapeError("conv_transpose2d: input " + xs.str() + " vs weight " + ws.str());
  }
  if (output_pad < 0 || output_pad >= stride) throw ShapeError("conv_transpose2d: output_pad must be < stride");
  const int k = ws.h, co = ws.c, ci = xs.c;
  if (bias.defined() && static_cast<int>(bias.numel()) != co) {
    throw ShapeError("conv_transpose2d: bias " + bias.shape().str() + " vs weight " + ws.str());
  }
  const int ho = (xs.h - 1) * stride - 2 * pad + k + output_pad;
  const int wo = (xs.w - 1) * stride - 2 * pad + k + output_pad;
  if (ho < 1 || wo < 1) throw ShapeError("conv_transpose2d: empty output for " + xs.str());
  // Geometry of the forward convolution that maps the output back to x.
  ConvGeom g{xs.n, co, ho, wo, k, stride, pad, xs.h, xs.w};
  const std::size_t in_plane = xs.hw();

  auto xcn = std::make_shared<std::vector<T>>(static_cast<std::size_t>(ci) * g.cols());
  nchw_to_cn(x.data(), xs.n, ci, in_plane, xcn->data());
  std::vector<T> cols(g.rows() * g.cols());
  MatMap<T>(cols.data(), g.rows(), g.cols()).noalias() =
      ConstMatMap<T>(weight.data(), ci, g.rows()).transpose() * ConstMatMap<T>(xcn->data(), ci, g.cols());
  std::vector<T> y(static_cast<std::size_t>(xs.n) * co * ho * wo, T(0));
  col2im(cols.data(), g, y.data());
  if (bias.defined()) {
    const std::size_t plane = static_cast<std::size_t>(ho) * wo;
    for (int b = 0; b < xs.n; ++b)
      for (int c = 0; c < co; ++c) {
        T* dst = y.data() + (static_cast<std::size_t>(b) * co + c) * plane;
        const T bv = bias.data()[c];
        for (std::size_t i = 0; i < plane; ++i) dst[i] += bv;
      }
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  auto out = make_result<T>({xs.n, co, ho, wo}, inputs, std::move(y));
  on_backward(out, [o = out.node(), px = x.node(), pw = weight.node(), pb = bias.defined() ? bias.node() : nullptr, g,
                    ci, in_plane, xcn] {
    std::vector<T> dcols(g.rows() * g.cols());
    im2col(o->grad.data(), g, dcols.data());
    ConstMatMap<T> D(dcols.data(), g.rows(), g.cols());
    if (pw->requires_grad) {
      MatMap<T>(pw->grad_data(), ci, g.rows()).noalias() += ConstMatMap<T>(xcn->data(), ci, g.cols()) * D.transpose();
    }
    if (px->requires_grad) {
      std::vector<T> gx(static_cast<std::size_t>(ci) * g.cols());
      MatMap<T>(gx.data(), ci, g.cols()).noalias() = ConstMatMap<T>(pw->value.data(), ci, g.rows()) * D;
      cn_to_nchw(gx.data(), g.n, ci, in_plane, px->grad_data(), true);
    }
    if (pb && pb->requires_grad) {
      T* gb = pb->grad_data();
      const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
      for (int c = 0; c < g.c; ++c) {
        double acc = 0.0;
        for (int b = 0; b < g.n; ++b) {
          const T* src = o->grad.data() + (static_cast<std::size_t>(b) * g.c + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) acc += src[i];
        }
        gb[c] += static_cast<T>(acc);
      }
    }
  });
  return out;
}

/// Max pooling with a k x k window, no padding.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& x, int k, int stride) {
  const Shape& in = x.shape();
  const int ho = (in.h - k) / stride + 1, wo = (in.w - k) / stride + 1;
  if (ho < 1 || wo < 1) throw ShapeError("maxpool2d: window " + std::to_string(k) + " larger than " + in.str());
  Shape s{in.n, in.c, ho, wo};
  std::vector<T> y(s.numel());
  auto argmax = std::make_shared<std::vector<std::size_t>>(s.numel());
  for (int p = 0; p < in.n * in.c; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * in.hw();
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        std::size_t best = base + static_cast<std::size_t>(oy * stride) * in.w + ox * stride;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            const std::size_t idx = base + static_cast<std::size_t>(oy * stride + i) * in.w + ox * stride + j;
            if (x.data()[idx] > x.data()[best]) best = idx;
          }
        const std::size_t o = static_cast<std::size_t>(p) * ho * wo + static_cast<std::size_t>(oy) * wo + ox;
        y[o] = x.data()[best];
        (*argmax)[o] = best;
      }
  }
  auto out = make_result<T>(s, {x}, std::move(y));
  on_backward(out, [o = out.node(), p = x.node(), argmax] {
    T* g = p->grad_data();
    for (std::size_t i = 0; i < argmax->size(); ++i) g[(*argmax)[i]] += o->grad[i];
  });
  return out;
}

namespace detail {
struct LerpTap {
  int i0, i1;
  double w0, w1;
};
// Half-pixel-centered source taps for x2 upsampling (edges clamp).
inline std::vector<LerpTap> upsample_taps(int in) {
  std::vector<LerpTap> taps(2 * in);
  for (int o = 0; o < 2 * in; ++o) {
    double src = (o + 0.5) / 2.0 - 0.5;
    if (src < 0) src = 0;
    const int i0 = std::min(static_cast<int>(src), in - 1);
    const int i1 = std::min(i0 + 1, in - 1);
    const double l1 = src - i0;
    taps[o] = {i0, i1, 1.0 - l1, l1};
  }
  return taps;
}
}  // namespace detail

/// Bilinear upsampling by 2 (half-pixel centers).
template <class T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  const Shape& in = x.shape();
  Shape s{in.n, in.c, 2 * in.h, 2 * in.w};
  const auto ty = detail::upsample_taps(in.h), tx = detail::upsample_taps(in.w);
  std::vector<T> y(s.numel());
  for (int p = 0; p < in.n * in.c; ++p) {
    const T* src = x.data() + static_cast<std::size_t>(p) * in.hw();
    T* dst = y.data() + static_cast<std::size_t>(p) * s.hw();
    for (int oy = 0; oy < s.h; ++oy) {
      const auto& a = ty[oy];
      for (int ox = 0; ox < s.w; ++ox) {
        const auto& b = tx[ox];
        dst[oy * s.w + ox] = static_cast<T>(a.w0 * (b.w0 * src[a.i0 * in.w + b.i0] + b.w1 * src[a.i0 * in.w + b.i1]) +
                                            a.w1 * (b.w0 * src[a.i1 * in.w + b.i0] + b.w1 * src[a.i1 * in.w + b.i1]));
      }
    }
  }
  auto out = make_result<T>(s, {x}, std::move(y));
  on_backward(out, [o = out.node(), p = x.node(), ty, tx] {
    const Shape& in = p->shape;
    const Shape& s = o->shape;
    T* g = p->grad_data();
    for (int q = 0; q < in.n * in.c; ++q) {
      T* dst = g + static_cast<std::size_t>(q) * in.hw();
      const T* src = o->grad.data() + static_cast<std::size_t>(q) * s.hw();
      for (int oy = 0; oy < s.h; ++oy) {
        const auto& a = ty[oy];
        for (int ox = 0; ox < s.w; ++ox) {
          const auto& b = tx[ox];
          const double go = src[oy * s.w + ox];
          dst[a.i0 * in.w + b.i0] += static_cast<T>(go * a.w0 * b.w0);
          dst[a.i0 * in.w + b.i1] += static_cast<T>(go * a.w0 * b.w1);
          dst[a.i1 * in.w + b.i0] += static_cast<T>(go * a.w1 * b.w0);
          dst[a.i1 * in.w + b.i1] += static_cast<T>(go * a.w1 * b.w1);
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dense and normalization layers
// ---------------------------------------------------------------------------

/// Each sample flattened to chw features; weight (out, in), bias (out). Output (n,out,1,1).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  using namespace detail;
  const int n = x.shape().n;
  const int in = static_cast<int>(x.shape().chw());
  const int outf = weight.shape().n;
  if (static_cast<int>(weight.shape().chw()) != in) {
    throw ShapeError("linear: input " + x.shape().str() + " vs weight " + weight.shape().str());
  }
  if (bias.defined() && static_cast<int>(bias.numel()) != outf) {
    throw ShapeError("linear: bias " + bias.shape().str() + " vs weight " + weight.shape().str());
  }
  std::vector<T> y(static_cast<std::size_t>(n) * outf);
  MatMap<T> Y(y.data(), n, outf);
  Y.noalias() = ConstMatMap<T>(x.data(), n, in) * ConstMatMap<T>(weight.data(), outf, in).transpose();
  if (bias.defined()) {
    for (int b = 0; b < n; ++b)
      for (int j = 0; j < outf; ++j) Y(b, j) += bias.data()[j];
  }
  std::vector<Tensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  auto out = make_result<T>({n, outf, 1, 1}, inputs, std::move(y));
  on_backward(out, [o = out.node(), px = x.node(), pw = weight.node(), pb = bias.defined() ? bias.node() : nullptr, n,
                    in, outf] {
    ConstMatMap<T> G(o->grad.data(), n, outf);
    if (px->requires_grad) {
      MatMap<T>(px->grad_data(), n, in).noalias() += G * ConstMatMap<T>(pw->value.data(), outf, in);
    }
    if (pw->requires_grad) {
      MatMap<T>(pw->grad_data(), outf, in).noalias() += G.transpose() * ConstMatMap<T>(px->value.data(), n, in);
    }
    if (pb && pb->requires_grad) {
      T* gb = pb->grad_data();
      for (int j = 0; j < outf; ++j) {
        double acc = 0.0;
        for (int b = 0; b < n; ++b) acc += G(b, j);
        gb[j] += static_cast<T>(acc);
      }
    }
  });
  return out;
}

/// Per-channel batch normalization. In training mode batch statistics are used
/// and the running estimates (unbiased variance) are updated with `momentum`.
template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::vector<T>& running_mean,
                      std::vector<T>& running_var, bool training, double momentum = 0.1, double eps = 1e-5) {
  const Shape& s = x.shape();
  if (static_cast<int>(gamma.numel()) != s.c || static_cast<int>(beta.numel()) != s.c ||
      static_cast<int>(running_mean.size()) != s.c || static_cast<int>(running_var.size()) != s.c) {
    throw ShapeError("batchnorm2d: input " + s.str() + " vs " + std::to_string(gamma.numel()) + " channels");
  }
  const std::size_t hw = s.hw();
  const std::size_t m = static_cast<std::size_t>(s.n) * hw;
  auto xhat = std::make_shared<std::vector<T>>(s.numel());
  auto inv_std = std::make_shared<std::vector<double>>(s.c);
  std::vector<T> y(s.numel());
  for (int c = 0; c < s.c; ++c) {
    double mean, var;
    if (training) {
      double acc = 0.0;
      for (int b = 0; b < s.n; ++b) {
        const T* src = x.data() + (static_cast<std::size_t>(b) * s.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) acc += src[i];
      }
      mean = acc / m;
      double ss = 0.0;
      for (int b = 0; b < s.n; ++b) {
        const T* src = x.data() + (static_cast<std::size_t>(b) * s.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) ss += (src[i] - mean) * (src[i] - mean);
      }
      var = ss / m;
      const double unbiased = m > 1 ? ss / (m - 1) : var;
      running_mean[c] = static_cast<T>((1 - momentum) * running_mean[c] + momentum * mean);
      running_var[c] = static_cast<T>((1 - momentum) * running_var[c] + momentum * unbiased);
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const double istd = 1.0 / std::sqrt(var + eps);
    (*inv_std)[c] = istd;
    const double gm = gamma.data()[c], bt = beta.data()[c];
    for (int b = 0; b < s.n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * s.c + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double xh = (x.data()[off + i] - mean) * istd;
        (*xhat)[off + i] = static_cast<T>(xh);
        y[off + i] = static_cast<T>(gm * xh + bt);
      }
    }
  }
  auto out = make_result<T>(s, {x, gamma, beta}, std::move(y));
  on_backward(out, [o = out.node(), px = x.node(), pg = gamma.node(), pb = beta.node(), xhat, inv_std, training] {
    const Shape& s = o->shape;
    const std::size_t hw = s.hw();
    const double m = static_cast<double>(s.n) * hw;
    const T* go = o->grad.data();
    for (int c = 0; c < s.c; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int b = 0; b < s.n; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * s.c + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          sum_g += go[off + i];
          sum_gx += go[off + i] * (*xhat)[off + i];
        }
      }
      if (pg->requires_grad) pg->grad_data()[c] += static_cast<T>(sum_gx);
      if (pb->requires_grad) pb->grad_data()[c] += static_cast<T>(sum_g);
      if (px->requires_grad) {
        T* gx = px->grad_data();
        const double scale = pg->value[c] * (*inv_std)[c];
        for (int b = 0; b < s.n; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * s.c + c) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const double d = training ? (go[off + i] - sum_g / m - (*xhat)[off + i] * sum_gx / m) : go[off + i];
            gx[off + i] += static_cast<T>(scale * d);
          }
        }
      }
    }
  });
  return out;
}

/// Inverted dropout: zeroes each element with probability p and scales the rest
/// by 1/(1-p) in training mode; identity otherwise.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ShapeError("dropout: p must be < 1");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? T(0) : keep_scale;
    y[i] = x.data()[i] * (*mask)[i];
  }
  auto out = make_result<T>(x.shape(), {x}, std::move(y));
  on_backward(out, [o = out.node(), px = x.node(), mask] {
    T* g = px->grad_data();
    for (std::size_t i = 0; i < mask->size(); ++i) g[i] += o->grad[i] * (*mask)[i];
  });
  return out;
}

/// Mean squared error over all elements.
template <class T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape("mse", pred, target);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred.data()[i]) - target.data()[i];
    acc += d * d;
  }
  auto out = make_result<T>({1, 1, 1, 1}, {pred, target}, {static_cast<T>(acc / pred.numel())});
  on_backward(out, [o = out.node(), pp = pred.node(), pt = target.node()] {
    const double scale = 2.0 * o->grad[0] / pp->value.size();
    if (pp->requires_grad) {
      T* g = pp->grad_data();
      for (std::size_t i = 0; i < pp->value.size(); ++i) g[i] += static_cast<T>(scale * (pp->value[i] - pt->value[i]));
    }
    if (pt->requires_grad) {
      T* g = pt->grad_data();
      for (std::size_t i = 0; i < pp->value.size(); ++i) g[i] -= static_cast<T>(scale * (pp->value[i] - pt->value[i]));
    }
  });
  return out;
}

}  // namespace svw::ad
