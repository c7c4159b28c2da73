#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "axsym/covariance.hpp"
#include "axsym/geo.hpp"
#include "axsym/harmonics.hpp"
#include "axsym/rng.hpp"

namespace axsym {

/// One exact draw of the harmonic coefficients: coeffs[m][n−m] = Y_{nm} for
/// m >= 0; the negative orders are the conjugates and are never stored.
struct CoefficientDraw {
  int N = 0;
  std::vector<Eigen::VectorXcd> coeffs;
  std::uint64_t seed = 0;
};

/// m = 0: real Gaussian with covariance C₀ (factor times standard normals).
/// m >= 1: circular complex Gaussian with covariance C_m, built as A_m times
/// standard complex normals whose real and imaginary parts carry variance ½
/// each. One RNG stream per m, draws ordered by coefficient index.
inline CoefficientDraw sample_coefficients(const HarmonicCovariance& model,
                                           std::uint64_t seed) {
  validate(model);
  CoefficientDraw draw;
  draw.N = model.N;
  draw.seed = seed;
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (int m = 0; m <= model.N; ++m) {
    Philox rng(seed, derive_stream(StreamKind::kCoefficients, m));
    const int d = model.N - m + 1;
    Eigen::VectorXcd g(d);
    for (int k = 0; k < d; ++k) {
      if (m == 0) {
        g[k] = rng.normal();
      } else {
        const double re = rng.normal();
        const double im = rng.normal();
        g[k] = std::complex<double>(re * inv_sqrt2, im * inv_sqrt2);
      }
    }
    draw.coeffs.push_back(model.factors[m] * g);
  }
  return draw;
}

/// The real coefficient vector carried by real_basis: for m = 0 the Y_{n0}
/// themselves, for m >= 1 the pairs (√2·Re Y_{nm}, −√2·Im Y_{nm}).
inline Eigen::VectorXd real_coeff_vector(const CoefficientDraw& draw) {
  const int N = draw.N;
  Eigen::VectorXd alpha((N + 1) * (N + 1));
  const double sqrt2 = std::sqrt(2.0);
  for (int n = 0; n <= N; ++n) alpha[n] = draw.coeffs[0][n].real();
  for (int m = 1; m <= N; ++m)
    for (int n = m; n <= N; ++n) {
      alpha[real_basis_index(N, n, m, false)] =
          sqrt2 * draw.coeffs[m][n - m].real();
      alpha[real_basis_index(N, n, m, true)] =
          -sqrt2 * draw.coeffs[m][n - m].imag();
    }
  return alpha;
}

/// Evaluates the truncated expansion at each point via conjugate symmetry
/// (m = 0 term plus twice the real part of the m >= 1 terms, carried out as
/// a real basis·coefficient product), then adds independent N(0, nugget)
/// noise from one stream per point index.
inline Eigen::VectorXd synthesize_field(const CoefficientDraw& draw,
                                        std::span<const GeoPoint> points,
                                        double nugget, std::uint64_t seed) {
  if (!(nugget >= 0.0))
    throw std::invalid_argument("synthesize_field: nugget must be >= 0");
  const Eigen::VectorXd alpha = real_coeff_vector(draw);
  Eigen::VectorXd out(points.size());
  const double sd = std::sqrt(nugget);
  for (size_t i = 0; i < points.size(); ++i) {
    const auto b = real_basis(draw.N, points[i].lat, points[i].lon);
    double v = b.dot(alpha);
    if (nugget > 0.0) {
      Philox rng(seed, derive_stream(StreamKind::kNugget, i));
      v += sd * rng.normal();
    }
    out[i] = v;
  }
  return out;
}

/// Synthetic polar-orbit sampling pattern: each orbit is a great circle at
/// the given inclination whose ascending node drifts westward per orbit;
/// along it, evenly spaced scans of points_per_scan cross-track positions
/// span ±half_width_deg perpendicular to the track. Parameter defaults are
/// plausible for a sun-synchronous total-ozone mapper but are artifact
/// choices, not data.
struct SwathConfig {
  int orbits = 14;
  int scans_per_orbit = 80;
  int points_per_scan = 35;
  double inclination_deg = 99.0;
  double half_width_deg = 12.0;
  double node_lon0_deg = 0.0;
  double node_drift_deg = 25.7;
  double scan_period_s = 65.0;
  double orbit_period_s = 5900.0;
  double lat_min = -90.0;
  double lat_max = 90.0;
};

inline std::vector<Orbit> synthetic_orbits(const SwathConfig& cfg) {
  if (cfg.orbits < 1 || cfg.scans_per_orbit < 1 || cfg.points_per_scan < 1)
    throw std::invalid_argument("synthetic_orbits: counts must be positive");
  if (!(cfg.half_width_deg >= 0.0) || cfg.half_width_deg >= 90.0)
    throw std::invalid_argument("synthetic_orbits: bad half width");
  std::vector<Orbit> orbits;
  orbits.reserve(cfg.orbits);
  const double inc = deg2rad(cfg.inclination_deg);
  for (int k = 0; k < cfg.orbits; ++k) {
    Orbit orbit;
    orbit.orbit_id = k;
    const double node = deg2rad(cfg.node_lon0_deg - k * cfg.node_drift_deg);
    // orbit plane basis: ascending node direction and the in-plane normal
    const double nx = std::cos(node), ny = std::sin(node);
    const double ex = -std::sin(node) * std::cos(inc);
    const double ey = std::cos(node) * std::cos(inc);
    const double ez = std::sin(inc);
    for (int s = 0; s < cfg.scans_per_orbit; ++s) {
      const double tau = 2.0 * kPi * s / cfg.scans_per_orbit;
      const double ct = std::cos(tau), st = std::sin(tau);
      // track position and its unit tangent
      const double px = ct * nx + st * ex;
      const double py = ct * ny + st * ey;
      const double pz = st * ez;
      const double tx = -st * nx + ct * ex;
      const double ty = -st * ny + ct * ey;
      const double tz = ct * ez;
      const double time =
          k * cfg.orbit_period_s + s * cfg.scan_period_s;
      for (int j = 0; j < cfg.points_per_scan; ++j) {
        const double frac = cfg.points_per_scan == 1
                                ? 0.0
                                : (2.0 * j / (cfg.points_per_scan - 1) - 1.0);
        const double delta = deg2rad(cfg.half_width_deg * frac);
        const double cd = std::cos(delta), sd = std::sin(delta);
        // rotate p about the tangent axis: p cos δ + (t × p) sin δ
        const double cxp = ty * pz - tz * py;
        const double cyp = tz * px - tx * pz;
        const double czp = tx * py - ty * px;
        const double qx = cd * px + sd * cxp;
        const double qy = cd * py + sd * cyp;
        const double qz = cd * pz + sd * czp;
        const double lat = rad2deg(std::asin(std::max(-1.0, std::min(1.0, qz))));
        if (lat < cfg.lat_min || lat > cfg.lat_max) continue;
        const double lon = rad2deg(std::atan2(qy, qx));
        Observation o;
        o.orbit_id = k;
        o.time_s = time;
        o.point = make_point(lat, lon);
        orbit.observations.push_back(o);
      }
    }
    orbits.push_back(std::move(orbit));
  }
  return orbits;
}

/// One shared field realization sampled over the full swath pattern (the
/// field is static across orbits; only the nugget noise is fresh per point).
inline std::vector<Orbit> simulate_observations(const HarmonicCovariance& model,
                                                const SwathConfig& cfg,
                                                std::uint64_t seed) {
  auto orbits = synthetic_orbits(cfg);
  const auto draw = sample_coefficients(model, seed);
  std::vector<GeoPoint> pts;
  for (const auto& orbit : orbits)
    for (const auto& o : orbit.observations) pts.push_back(o.point);
  const Eigen::VectorXd values =
      synthesize_field(draw, pts, model.nugget, seed);
  size_t i = 0;
  for (auto& orbit : orbits)
    for (auto& o : orbit.observations) o.value = values[i++];
  return orbits;
}

inline std::vector<Observation> flatten(std::span<const Orbit> orbits) {
  std::vector<Observation> out;
  for (const auto& orbit : orbits)
    out.insert(out.end(), orbit.observations.begin(),
               orbit.observations.end());
  return out;
}

}  // namespace axsym
