#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "svw/render.hpp"
#include "svw/solver.hpp"

namespace svw {
namespace {

Field centered_bump(int n, double dx, double amplitude, double sigma) {
  Field h(n);
  const double c0 = 0.5 * (n - 1) * dx;
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      const double x = c * dx - c0, y = r * dx - c0;
      h(r, c) = amplitude * std::exp(-(x * x + y * y) / (2 * sigma * sigma));
    }
  return h;
}

TEST(Hillshade, FlatFieldIsSinAltitude) {
  RenderParams rp;
  const auto img = hillshade(Field(32), 0.2, rp);
  for (double x : img.values()) EXPECT_NEAR(x, std::sin(deg2rad(20.0)), 1e-15);
  EXPECT_NEAR(flat_shade(rp), 0.3420201433, 1e-9);
}

TEST(Hillshade, RampFacingLight) {
  RenderParams rp;
  rp.azimuth_deg = 45.0;
  rp.exaggeration = 1.0;
  // Plane whose aspect atan2(q, -p) equals the azimuth.
  const double slope = deg2rad(30.0);
  const double g = std::tan(slope);
  const double az = deg2rad(rp.azimuth_deg);
  const double p = -g * std::cos(az), q = g * std::sin(az);
  const int n = 24;
  const double dx = 0.5;
  Field h(n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) h(r, c) = p * c * dx + q * r * dx;
  const auto img = hillshade(h, dx, rp);
  const double zenith = deg2rad(90.0 - rp.altitude_deg);
  for (double x : img.values()) EXPECT_NEAR(x, std::cos(zenith - slope), 1e-12);
}

TEST(Hillshade, OppositeAzimuthIsPointReflection) {
  const int n = 41;
  const double dx = 0.25;
  const auto h = centered_bump(n, dx, 0.1, 1.0);
  RenderParams a, b;
  a.azimuth_deg = 45.0;
  b.azimuth_deg = 225.0;
  const auto ia = hillshade(h, dx, a);
  const auto ib = hillshade(h, dx, b);
  EXPECT_LE(max_abs_diff(flip_rows(flip_columns(ia)), ib), 1e-6);
  // Not trivially symmetric by itself.
  EXPECT_GT(max_abs_diff(ia, ib), 0.1);
}

TEST(Hillshade, InvariantToConstantOffset) {
  const auto h = centered_bump(33, 0.3, 0.1, 1.0);
  Field shifted = h;
  for (double& x : shifted.values()) x += 0.25;
  EXPECT_LE(max_abs_diff(hillshade(h, 0.3, {}), hillshade(shifted, 0.3, {})), 1e-9);
}

TEST(Hillshade, DefaultDropletHasContrast) {
  // Default render of a default droplet on the desk grid.
  SimParams p;
  p.tank_size_m = 20.0;  // widest tank gives the gentlest slopes
  InitialCondition ic;
  ic.amplitude = 0.1;
  ic.width_sigma = p.tank_size_m / 20.0;
  ic.centers = {{10.0, 10.0}};
  const auto img = hillshade(state_from(ic, p).h, p.dx(), {});
  const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
  EXPECT_GE(*hi - *lo, 0.3);
}

TEST(Resample, ConstantStaysConstant) {
  Image img(64, 0.5);
  for (int out : {64, 47, 32, 5}) {
    const auto r = resample(img, out);
    for (double x : r.values()) EXPECT_NEAR(x, 0.5, 1e-14);
  }
  const auto big = resample(Image(184, 0.5), 128);
  for (double x : big.values()) EXPECT_NEAR(x, 0.5, 1e-14);
}

TEST(Resample, CheckerboardAveragesToHalf) {
  Image img(4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) img(r, c) = (r + c) % 2;
  const auto out = resample(img, 2);
  for (double x : out.values()) EXPECT_DOUBLE_EQ(x, 0.5);
}

TEST(Resample, PreservesMeanForIntegerRatios) {
  Image img(48);
  Rng rng(4);
  for (double& x : img.values()) x = rng.uniform();
  for (int out : {24, 16, 12, 6}) {
    const auto r = resample(img, out);
    double m0 = 0, m1 = 0;
    for (double x : img.values()) m0 += x;
    for (double x : r.values()) m1 += x;
    EXPECT_NEAR(m0 / img.size(), m1 / r.size(), 1e-12);
  }
}

TEST(Resample, IsLinear) {
  Rng rng(8);
  Image x(37), y(37), z(37);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x.values()[i] = rng.uniform();
    y.values()[i] = rng.uniform();
    z.values()[i] = 0.3 * x.values()[i] - 1.7 * y.values()[i];
  }
  const auto rx = resample(x, 23), ry = resample(y, 23), rz = resample(z, 23);
  for (std::size_t i = 0; i < rz.size(); ++i) {
    EXPECT_NEAR(rz.values()[i], 0.3 * rx.values()[i] - 1.7 * ry.values()[i], 1e-12);
  }
}

TEST(Resample, RejectsUpsampling) { EXPECT_THROW(resample(Image(8), 16), UsageError); }

TEST(Norm, ConstantDataRejected) {
  std::vector<float> px(100, 0.4f);
  EXPECT_THROW(NormStats::fit<float>(px), DataError);
}

TEST(Norm, ApplyStandardizes) {
  Rng rng(2);
  std::vector<double> px(5000);
  for (double& x : px) x = 0.2 + 0.6 * rng.uniform() * rng.uniform();
  const auto st = NormStats::fit<double>(px);
  std::vector<double> z = px;
  st.apply_inplace<double>(z);
  double m = 0, s = 0;
  for (double x : z) m += x;
  m /= z.size();
  for (double x : z) s += (x - m) * (x - m);
  s = std::sqrt(s / z.size());
  EXPECT_LE(std::abs(m), 1e-6);
  EXPECT_NEAR(s, 1.0, 1e-6);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(st.invert(z[i]), px[i], 1e-12);
}

TEST(Norm, TextRoundTrip) {
  const NormStats st{0.3456789012345678, 0.1234567890123456};
  const auto path = std::filesystem::temp_directory_path() / "svw_norm_test.txt";
  st.save(path.string());
  EXPECT_EQ(NormStats::load(path.string()), st);
  std::filesystem::remove(path);
}

TEST(Pgm, RoundTripsQuantizedValues) {
  Image img(5);
  for (std::size_t i = 0; i < img.size(); ++i) img.values()[i] = (i * 13 % 256) / 255.0;
  img.values()[0] = -0.5;
  img.values()[1] = 2.0;
  const auto path = std::filesystem::temp_directory_path() / "svw_pgm_test.pgm";
  write_pgm(path.string(), img);
  const auto back = read_pgm(path.string());
  EXPECT_EQ(back.values()[0], 0.0);
  EXPECT_EQ(back.values()[1], 1.0);
  for (std::size_t i = 2; i < img.size(); ++i) EXPECT_NEAR(back.values()[i], img.values()[i], 1e-12);
  EXPECT_EQ(std::filesystem::file_size(path), std::string("P5\n5 5\n255\n").size() + 25);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace svw
