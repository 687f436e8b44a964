#pragma once

// Hillshade rendering of displacement fields, area resampling and
// pixel normalization.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "svw/core/config.hpp"
#include "svw/core/error.hpp"
#include "svw/core/field.hpp"

namespace svw {

using Image = SquareField<double>;

struct RenderParams {
  double azimuth_deg = 45.0;
  double altitude_deg = 20.0;
  double exaggeration = 50.0;
  int native_n = 64;
  int out_n = 32;

  void validate() const {
    if (!(altitude_deg > 0.0 && altitude_deg <= 90.0)) throw UsageError("altitude must be in (0, 90]");
    if (!(azimuth_deg >= 0.0 && azimuth_deg < 360.0)) throw UsageError("azimuth must be in [0, 360)");
    if (!(exaggeration > 0.0)) throw UsageError("exaggeration must be > 0");
    if (out_n < 1 || out_n > native_n) throw UsageError("out_n must be in [1, native_n]");
  }
};

inline constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

/// Lambertian shade for surface gradient (p, q), before clamping.
inline double shade_value(double p, double q, const RenderParams& rp) {
  const double zenith = deg2rad(90.0 - rp.altitude_deg);
  const double azimuth = deg2rad(rp.azimuth_deg);
  const double slope = std::atan(std::sqrt(p * p + q * q));
  const double aspect = std::atan2(q, -p);
  return std::cos(zenith) * std::cos(slope) +
         std::sin(zenith) * std::sin(slope) * std::cos(azimuth - aspect);
}

/// Shade of a flat surface: cos(zenith) = sin(altitude).
inline double flat_shade(const RenderParams& rp) {
  return std::clamp(shade_value(0.0, 0.0, rp), 0.0, 1.0);
}

/// Shaded grayscale image in [0,1]. `dx` is the physical grid spacing;
/// gradients use central differences inside and one-sided differences on the edges.
inline Image hillshade(const Field& h, double dx, const RenderParams& rp) {
  const int n = h.n();
  Image img(n);
  auto deriv = [n, dx](double lo, double hi, int i) {
    return (i == 0 || i == n - 1) ? (hi - lo) / dx : (hi - lo) / (2.0 * dx);
  };
  for (int r = 0; r < n; ++r) {
    const int r0 = std::max(r - 1, 0), r1 = std::min(r + 1, n - 1);
    for (int c = 0; c < n; ++c) {
      const int c0 = std::max(c - 1, 0), c1 = std::min(c + 1, n - 1);
      const double p = rp.exaggeration * deriv(h(r, c0), h(r, c1), c);
      const double q = rp.exaggeration * deriv(h(r0, c), h(r1, c), r);
      img(r, c) = std::clamp(shade_value(p, q, rp), 0.0, 1.0);
    }
  }
  return img;
}

namespace detail {

// Area-weighted averaging matrix (out_n x in_n) for one axis.
inline std::vector<std::vector<std::pair<int, double>>> area_weights(int in_n, int out_n) {
  std::vector<std::vector<std::pair<int, double>>> w(out_n);
  const double ratio = static_cast<double>(in_n) / out_n;
  for (int o = 0; o < out_n; ++o) {
    const double a = o * ratio, b = (o + 1) * ratio;
    for (int i = static_cast<int>(std::floor(a)); i < in_n && i < b; ++i) {
      const double overlap = std::min<double>(b, i + 1) - std::max<double>(a, i);
      if (overlap > 0) w[o].push_back({i, overlap / ratio});
    }
  }
  return w;
}

}  // namespace detail

/// Area-weighted downsampling to out_n x out_n.
template <class T>
SquareField<T> resample(const SquareField<T>& img, int out_n) {
  const int n = img.n();
  if (out_n < 1 || out_n > n) {
    throw UsageError("resample: cannot upsample " + std::to_string(n) + " to " + std::to_string(out_n));
  }
  if (out_n == n) return img;
  const auto w = detail::area_weights(n, out_n);
  std::vector<double> tmp(static_cast<std::size_t>(n) * out_n, 0.0);  // n rows x out_n cols
  for (int r = 0; r < n; ++r)
    for (int oc = 0; oc < out_n; ++oc) {
      double acc = 0.0;
      for (auto [i, wt] : w[oc]) acc += wt * img(r, i);
      tmp[static_cast<std::size_t>(r) * out_n + oc] = acc;
    }
  SquareField<T> out(out_n);
  for (int orow = 0; orow < out_n; ++orow)
    for (int oc = 0; oc < out_n; ++oc) {
      double acc = 0.0;
      for (auto [i, wt] : w[orow]) acc += wt * tmp[static_cast<std::size_t>(i) * out_n + oc];
      out(orow, oc) = static_cast<T>(acc);
    }
  return out;
}

/// Renders a displacement field at native resolution and resamples to the output size.
inline Image render_frame(const Field& h, double dx, const RenderParams& rp) {
  return resample(hillshade(h, dx, rp), rp.out_n);
}

/// Pixel standardization statistics, fit on training frames only.
struct NormStats {
  double mean = 0.0;
  double std = 1.0;

  template <class T>
  static NormStats fit(std::span<const T> pixels) {
    if (pixels.empty()) throw DataError("cannot fit normalization on empty data");
    double sum = 0.0;
    for (T x : pixels) sum += static_cast<double>(x);
    const double mean = sum / pixels.size();
    double ss = 0.0;
    for (T x : pixels) {
      const double d = static_cast<double>(x) - mean;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / pixels.size());
    if (!(sd > 0.0)) throw DataError("normalization std is zero");
    return {mean, sd};
  }

  template <class T>
  T apply(T x) const {
    return static_cast<T>((static_cast<double>(x) - mean) / std);
  }
  template <class T>
  T invert(T x) const {
    return static_cast<T>(static_cast<double>(x) * std + mean);
  }

  template <class T>
  void apply_inplace(std::span<T> xs) const {
    for (T& x : xs) x = apply(x);
  }
  template <class T>
  void invert_inplace(std::span<T> xs) const {
    for (T& x : xs) x = invert(x);
  }

  bool operator==(const NormStats&) const = default;

  /// Text form "mean=<f64>\nstd=<f64>\n" with round-trip precision.
  std::string to_text() const {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "mean=%.17g\nstd=%.17g\n", mean, std);
    return buf;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << to_text();
  }

  static NormStats load(const std::string& path) {
    const auto cfg = KeyValueConfig::load(path);
    NormStats s{KeyValueConfig::to_double("mean", cfg.require("mean")),
                KeyValueConfig::to_double("std", cfg.require("std"))};
    if (!(s.std > 0.0)) throw DataError(path + ": std must be > 0");
    return s;
  }
};

/// 8-bit binary PGM (P5), value = round(255 * clamp(x, 0, 1)).
template <class T>
void write_pgm(const std::string& path, const SquareField<T>& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "P5\n" << img.n() << " " << img.n() << "\n255\n";
  for (T x : img.values()) {
    const double v = std::clamp(static_cast<double>(x), 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
  }
}

/// Reads a P5 PGM written by write_pgm; values scaled back to [0,1].
inline Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::string magic;
  int w = 0, hgt = 0, maxval = 0;
  in >> magic >> w >> hgt >> maxval;
  in.get();
  if (magic != "P5" || w != hgt || w <= 0 || maxval != 255) throw DataError(path + ": unsupported PGM");
  Image img(w);
  for (double& x : img.values()) {
    const int byte = in.get();
    if (byte == EOF) throw DataError(path + ": truncated PGM");
    x = byte / 255.0;
  }
  return img;
}

}  // namespace svw
