#pragma once

// Saint-Venant integrator on a square tank with reflective walls.
//
// Method of lines: second-order centered differences on a vertex-centered
// grid (nodes on the walls), classical RK4 in time. Walls are handled with
// mirror ghost nodes: h and the tangential velocity are even across a wall,
// the normal velocity is odd (zero on the wall).

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "svw/core/error.hpp"
#include "svw/core/field.hpp"
#include "svw/core/random.hpp"

namespace svw {

struct SimParams {
  double tank_size_m = 15.0;
  double depth_m = 10.0;
  double gravity = 9.81;
  double kin_viscosity = 1e-6;
  int grid_n = 64;
  double dt_out = 0.01;
  int n_frames = 100;
  double cfl_safety = 0.4;
  // Added to the gravity-wave speed in the CFL bound.
  double speed_allowance = 0.0;
  // When false the viscous Laplacian terms are dropped.
  bool viscous = true;

  double dx() const { return tank_size_m / (grid_n - 1); }

  void validate() const {
    if (!(tank_size_m > 0)) throw UsageError("tank_size_m must be > 0");
    if (!(depth_m > 0)) throw UsageError("depth_m must be > 0");
    if (!(gravity > 0)) throw UsageError("gravity must be > 0");
    if (grid_n < 16) throw UsageError("grid_n must be >= 16");
    if (!(dt_out > 0)) throw UsageError("dt_out must be > 0");
    if (!(kin_viscosity >= 0)) throw UsageError("kin_viscosity must be >= 0");
    if (n_frames < 0) throw UsageError("n_frames must be >= 0");
  }
};

struct SimState {
  Field h;  // displacement above the mean depth (m)
  Field u;  // x velocity (m/s)
  Field v;  // y velocity (m/s)
  double t = 0.0;

  static SimState rest(int n) { return SimState{Field(n), Field(n), Field(n), 0.0}; }
};

enum class InitKind : std::uint32_t { droplet = 0, double_droplet = 1, line = 2 };

inline std::string to_string(InitKind k) {
  switch (k) {
    case InitKind::droplet: return "droplet";
    case InitKind::double_droplet: return "double_droplet";
    case InitKind::line: return "line";
  }
  return "unknown";
}

inline InitKind parse_init_kind(const std::string& s) {
  if (s == "droplet") return InitKind::droplet;
  if (s == "double_droplet" || s == "double") return InitKind::double_droplet;
  if (s == "line" || s == "lines") return InitKind::line;
  throw UsageError("unknown initial condition kind '" + s + "'");
}

inline InitKind init_kind_from_code(std::uint32_t code) {
  if (code > 2) throw DataError("unknown initial condition code " + std::to_string(code));
  return static_cast<InitKind>(code);
}

struct InitialCondition {
  InitKind kind = InitKind::droplet;
  std::vector<std::array<double, 2>> centers;  // (x, y) in meters
  double amplitude = 0.1;
  double width_sigma = 0.75;
};

/// Droplet shape relative to the tank; sigma = width_fraction * tank size.
struct InitShape {
  double amplitude = 0.1;
  double width_fraction = 1.0 / 20.0;
};

struct Tendencies {
  Field dh, du, dv;
};

namespace detail {

// Neighbor lookup with mirror ghosts. parity = +1 for even fields, -1 for odd.
inline double east(const Field& f, int r, int c, double parity) {
  const int n = f.n();
  return c + 1 < n ? f(r, c + 1) : parity * f(r, n - 2);
}
inline double west(const Field& f, int r, int c, double parity) {
  return c > 0 ? f(r, c - 1) : parity * f(r, 1);
}
inline double north(const Field& f, int r, int c, double parity) {
  const int n = f.n();
  return r + 1 < n ? f(r + 1, c) : parity * f(n - 2, c);
}
inline double south(const Field& f, int r, int c, double parity) {
  return r > 0 ? f(r - 1, c) : parity * f(1, c);
}

inline bool all_finite(const Field& f) {
  for (double x : f.values())
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

/// Explicit right-hand side of the Saint-Venant system.
inline Tendencies rhs(const SimState& s, const SimParams& p) {
  using namespace detail;
  const int n = s.h.n();
  const double inv2dx = 1.0 / (2.0 * p.dx());
  const double invdx2 = 1.0 / (p.dx() * p.dx());
  const double g = p.gravity;
  const double nu = p.viscous ? p.kin_viscosity : 0.0;
  const double H = p.depth_m;

  // Mass fluxes (H+h)u and (H+h)v; odd across x-walls and y-walls respectively.
  Field fx(n), fy(n);
  for (std::size_t i = 0; i < fx.size(); ++i) {
    const double depth = H + s.h.values()[i];
    fx.values()[i] = depth * s.u.values()[i];
    fy.values()[i] = depth * s.v.values()[i];
  }

  Tendencies out{Field(n), Field(n), Field(n)};
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double div = (east(fx, r, c, -1) - west(fx, r, c, -1)) * inv2dx +
                         (north(fy, r, c, -1) - south(fy, r, c, -1)) * inv2dx;
      out.dh(r, c) = -div;

      const double u = s.u(r, c), v = s.v(r, c);
      const double hx = (east(s.h, r, c, 1) - west(s.h, r, c, 1)) * inv2dx;
      const double hy = (north(s.h, r, c, 1) - south(s.h, r, c, 1)) * inv2dx;

      const double ux = (east(s.u, r, c, -1) - west(s.u, r, c, -1)) * inv2dx;
      const double uy = (north(s.u, r, c, 1) - south(s.u, r, c, 1)) * inv2dx;
      const double vx = (east(s.v, r, c, 1) - west(s.v, r, c, 1)) * inv2dx;
      const double vy = (north(s.v, r, c, -1) - south(s.v, r, c, -1)) * inv2dx;

      // Neighbor pairs are summed before subtracting the center so mirrored
      // states produce bit-identical results.
      const double lap_u = ((east(s.u, r, c, -1) + west(s.u, r, c, -1)) - 2.0 * u) * invdx2 +
                           ((north(s.u, r, c, 1) + south(s.u, r, c, 1)) - 2.0 * u) * invdx2;
      const double lap_v = ((east(s.v, r, c, 1) + west(s.v, r, c, 1)) - 2.0 * v) * invdx2 +
                           ((north(s.v, r, c, -1) + south(s.v, r, c, -1)) - 2.0 * v) * invdx2;

      out.du(r, c) = (-(u * ux + v * uy) - g * hx) + nu * lap_u;
      out.dv(r, c) = (-(u * vx + v * vy) - g * hy) + nu * lap_v;
    }
  }
  if (!all_finite(out.dh) || !all_finite(out.du) || !all_finite(out.dv)) {
    throw DivergenceError(s.t, "non-finite tendency");
  }
  return out;
}

struct Substep {
  double dt_cfl = 0.0;  // raw CFL bound
  int count = 0;        // substeps per output frame
  double dt = 0.0;      // dt_out / count
};

/// CFL-limited internal step, shrunk so it divides dt_out exactly.
inline Substep stable_substep(const SimParams& p) {
  p.validate();
  if (!(p.cfl_safety > 0)) throw UsageError("cfl_safety must be > 0");
  Substep s;
  s.dt_cfl = p.cfl_safety * p.dx() / (std::sqrt(p.gravity * p.depth_m) + p.speed_allowance);
  s.count = static_cast<int>(std::ceil(p.dt_out / s.dt_cfl - 1e-12));
  if (s.count < 1) s.count = 1;
  s.dt = p.dt_out / s.count;
  return s;
}

/// Zero normal velocity on the walls.
inline void apply_walls(SimState& s) {
  const int n = s.h.n();
  for (int r = 0; r < n; ++r) {
    s.u(r, 0) = 0.0;
    s.u(r, n - 1) = 0.0;
  }
  for (int c = 0; c < n; ++c) {
    s.v(0, c) = 0.0;
    s.v(n - 1, c) = 0.0;
  }
}

namespace detail {

inline SimState axpy(const SimState& s, double a, const Tendencies& k) {
  SimState out = s;
  for (std::size_t i = 0; i < s.h.size(); ++i) {
    out.h.values()[i] += a * k.dh.values()[i];
    out.u.values()[i] += a * k.du.values()[i];
    out.v.values()[i] += a * k.dv.values()[i];
  }
  return out;
}

inline void rk4_substep(SimState& s, const SimParams& p, double dt) {
  const Tendencies k1 = rhs(s, p);
  SimState s2 = axpy(s, 0.5 * dt, k1);
  s2.t = s.t + 0.5 * dt;
  const Tendencies k2 = rhs(s2, p);
  SimState s3 = axpy(s, 0.5 * dt, k2);
  s3.t = s2.t;
  const Tendencies k3 = rhs(s3, p);
  SimState s4 = axpy(s, dt, k3);
  s4.t = s.t + dt;
  const Tendencies k4 = rhs(s4, p);
  const double w = dt / 6.0;
  for (std::size_t i = 0; i < s.h.size(); ++i) {
    s.h.values()[i] += w * ((k1.dh.values()[i] + k4.dh.values()[i]) +
                            2.0 * (k2.dh.values()[i] + k3.dh.values()[i]));
    s.u.values()[i] += w * ((k1.du.values()[i] + k4.du.values()[i]) +
                            2.0 * (k2.du.values()[i] + k3.du.values()[i]));
    s.v.values()[i] += w * ((k1.dv.values()[i] + k4.dv.values()[i]) +
                            2.0 * (k2.dv.values()[i] + k3.dv.values()[i]));
  }
  s.t += dt;
  apply_walls(s);
}

inline void check_state(const SimState& s, const SimParams& p) {
  if (!all_finite(s.h) || !all_finite(s.u) || !all_finite(s.v)) {
    throw DivergenceError(s.t, "non-finite field");
  }
  for (double h : s.h.values()) {
    if (std::abs(h) > p.depth_m) throw DivergenceError(s.t, "|h| exceeds depth");
  }
}

}  // namespace detail

/// Advances the state by one output interval dt_out.
inline SimState step(const SimState& state, const SimParams& p) {
  const Substep sub = stable_substep(p);
  SimState s = state;
  for (int k = 0; k < sub.count; ++k) {
    detail::rk4_substep(s, p, sub.dt);
    detail::check_state(s, p);
  }
  return s;
}

/// Builds the displacement field for an initial condition; velocities start at rest.
inline SimState state_from(const InitialCondition& ic, const SimParams& p) {
  p.validate();
  const int n = p.grid_n;
  const double dx = p.dx();
  SimState s = SimState::rest(n);
  const double inv2s2 = 1.0 / (2.0 * ic.width_sigma * ic.width_sigma);
  for (int r = 0; r < n; ++r) {
    const double y = r * dx;
    for (int c = 0; c < n; ++c) {
      const double x = c * dx;
      double h = 0.0;
      if (ic.kind == InitKind::line) {
        const double d = x - ic.centers.at(0)[0];
        h = ic.amplitude * std::exp(-d * d * inv2s2);
      } else {
        for (const auto& ctr : ic.centers) {
          const double ddx = x - ctr[0], ddy = y - ctr[1];
          h += ic.amplitude * std::exp(-(ddx * ddx + ddy * ddy) * inv2s2);
        }
      }
      s.h(r, c) = h;
    }
  }
  return s;
}

inline void validate(const InitialCondition& ic, const SimParams& p) {
  if (!(ic.amplitude > 0)) throw UsageError("droplet amplitude must be > 0");
  if (!(ic.width_sigma > 0)) throw UsageError("droplet width must be > 0");
  const std::size_t want = ic.kind == InitKind::double_droplet ? 2 : 1;
  if (ic.centers.size() != want) throw UsageError("wrong number of centers for " + to_string(ic.kind));
  for (const auto& c : ic.centers) {
    if (c[0] < 0 || c[0] > p.tank_size_m || c[1] < 0 || c[1] > p.tank_size_m) {
      throw UsageError("initial condition center outside tank");
    }
  }
}

/// Samples a random initial excitation. Centers keep a 2-sigma margin from the walls.
inline std::pair<SimState, InitialCondition> make_initial(InitKind kind, const SimParams& p, Rng& rng,
                                                          const InitShape& shape = {}) {
  p.validate();
  InitialCondition ic;
  ic.kind = kind;
  ic.amplitude = shape.amplitude;
  ic.width_sigma = shape.width_fraction * p.tank_size_m;
  const double lo = 2.0 * ic.width_sigma;
  const double hi = p.tank_size_m - 2.0 * ic.width_sigma;
  if (!(hi > lo)) throw UsageError("droplet width too large for tank");
  auto sample_point = [&] { return std::array<double, 2>{rng.uniform(lo, hi), rng.uniform(lo, hi)}; };
  switch (kind) {
    case InitKind::droplet:
      ic.centers.push_back(sample_point());
      break;
    case InitKind::double_droplet: {
      const auto a = sample_point();
      std::array<double, 2> b;
      do {
        b = sample_point();
      } while (std::hypot(a[0] - b[0], a[1] - b[1]) < 2.0 * ic.width_sigma);
      ic.centers = {a, b};
      break;
    }
    case InitKind::line:
      ic.centers.push_back({rng.uniform(lo, hi), 0.5 * p.tank_size_m});
      break;
    default:
      throw UsageError("unknown initial condition kind");
  }
  validate(ic, p);
  return {state_from(ic, p), ic};
}

/// Steps n_frames times from `state`, invoking `on_frame(index, state)` after each.
inline void simulate(SimState state, const SimParams& p,
                     const std::function<void(int, const SimState&)>& on_frame) {
  for (int f = 0; f < p.n_frames; ++f) {
    try {
      state = step(state, p);
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.time(), e.detail(), f);
    }
    on_frame(f, state);
  }
}

/// Displacement snapshots at t = dt_out * {1..n_frames}.
inline std::vector<Field> run_sequence(const SimState& initial, const SimParams& p) {
  std::vector<Field> frames;
  frames.reserve(p.n_frames);
  simulate(initial, p, [&](int, const SimState& s) { frames.push_back(s.h); });
  return frames;
}

inline std::vector<Field> run_sequence(const SimParams& p, InitKind kind, Rng& rng,
                                       const InitShape& shape = {}) {
  return run_sequence(make_initial(kind, p, rng, shape).first, p);
}

/// Trapezoidal integral of a nodal field over the tank.
inline double integrate(const Field& f, double dx) {
  const int n = f.n();
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    const double wr = (r == 0 || r == n - 1) ? 0.5 : 1.0;
    for (int c = 0; c < n; ++c) {
      const double wc = (c == 0 || c == n - 1) ? 0.5 : 1.0;
      total += wr * wc * f(r, c);
    }
  }
  return total * dx * dx;
}

inline double volume_anomaly(const SimState& s, const SimParams& p) { return integrate(s.h, p.dx()); }

/// Integral of g h^2 + (H+h)(u^2+v^2).
inline double energy_proxy(const SimState& s, const SimParams& p) {
  Field e(s.h.n());
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double h = s.h.values()[i], u = s.u.values()[i], v = s.v.values()[i];
    e.values()[i] = p.gravity * h * h + (p.depth_m + h) * (u * u + v * v);
  }
  return integrate(e, p.dx());
}

}  // namespace svw
