#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace svw {

/// Square row-major grid. Row index runs along y, column index along x.
template <class T>
class SquareField {
 public:
  SquareField() = default;
  explicit SquareField(int n, T fill = T{}) : n_(n), data_(static_cast<std::size_t>(n) * n, fill) {}

  int n() const { return n_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int row, int col) { return data_[index(row, col)]; }
  const T& operator()(int row, int col) const { return data_[index(row, col)]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool operator==(const SquareField&) const = default;

 private:
  std::size_t index(int row, int col) const {
    assert(row >= 0 && row < n_ && col >= 0 && col < n_);
    return static_cast<std::size_t>(row) * n_ + col;
  }

  int n_ = 0;
  std::vector<T> data_;
};

using Field = SquareField<double>;

/// Mirror image across the vertical axis (columns reversed).
template <class T>
SquareField<T> flip_columns(const SquareField<T>& f) {
  SquareField<T> out(f.n());
  for (int r = 0; r < f.n(); ++r)
    for (int c = 0; c < f.n(); ++c) out(r, c) = f(r, f.n() - 1 - c);
  return out;
}

/// Mirror image across the horizontal axis (rows reversed).
template <class T>
SquareField<T> flip_rows(const SquareField<T>& f) {
  SquareField<T> out(f.n());
  for (int r = 0; r < f.n(); ++r)
    for (int c = 0; c < f.n(); ++c) out(r, c) = f(f.n() - 1 - r, c);
  return out;
}

template <class T>
SquareField<T> transpose(const SquareField<T>& f) {
  SquareField<T> out(f.n());
  for (int r = 0; r < f.n(); ++r)
    for (int c = 0; c < f.n(); ++c) out(r, c) = f(c, r);
  return out;
}

template <class T>
double max_abs_diff(const SquareField<T>& a, const SquareField<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.values()[i]) - static_cast<double>(b.values()[i])));
  }
  return m;
}

}  // namespace svw
