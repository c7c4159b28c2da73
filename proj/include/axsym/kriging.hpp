#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "axsym/covariance.hpp"
#include "axsym/fitting.hpp"
#include "axsym/geo.hpp"
#include "axsym/harmonics.hpp"
#include "axsym/mean_model.hpp"

namespace axsym {

/// Simple-kriging (known mean zero) output, one entry per target, on the
/// log scale. The variance is for the observable value at the target, so it
/// includes a fresh nugget draw and never drops below zero.
struct KrigeResult {
  std::vector<double> predictions;
  std::vector<double> variances;
};

namespace detail {

inline double finish_variance(double var) {
  if (var >= 0.0) return var;
  if (var > -1e-10) return 0.0;
  throw std::runtime_error("kriging variance negative beyond tolerance: " +
                           std::to_string(var));
}

/// Dense simple kriging against a factorized observation covariance.
/// `fill(j, k)` writes the continuous cross-covariances between target j and
/// every observation into k and returns the continuous variance at target j.
/// Cross terms never include the nugget: the target carries its own
/// independent draw, which enters the variance as `nugget` below.
template <class Fill>
KrigeResult krige_dense_core(const Eigen::MatrixXd& C, const Eigen::VectorXd& z,
                             size_t n_targets, double nugget, Fill&& fill) {
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "krige_residuals: observation covariance factorization failed");
  const Eigen::VectorXd alpha = llt.solve(z);
  KrigeResult out;
  out.predictions.reserve(n_targets);
  out.variances.reserve(n_targets);
  Eigen::VectorXd k(z.size());
  for (size_t j = 0; j < n_targets; ++j) {
    const double ktt = fill(j, k);
    out.predictions.push_back(k.dot(alpha));
    out.variances.push_back(
        finish_variance(ktt + nugget - k.dot(llt.solve(k))));
  }
  return out;
}

inline void split_obs(std::span<const Observation> obs,
                      std::vector<GeoPoint>* pts, Eigen::VectorXd* z) {
  pts->reserve(obs.size());
  z->resize(static_cast<Eigen::Index>(obs.size()));
  for (size_t i = 0; i < obs.size(); ++i) {
    pts->push_back(obs[i].point);
    (*z)[static_cast<Eigen::Index>(i)] = obs[i].value;
  }
}

}  // namespace detail

/// Low-rank simple kriging. With U the basis-times-factor matrix at the
/// observations, the observation covariance is UUᵀ + vI, so
/// kᵀC⁻¹z = wᵀG⁻¹Uᵀz with G = vI + UᵀU and w the factored basis at the
/// target, and the kriging variance collapses to v·(1 + wᵀG⁻¹w). One inner
/// factorization of G serves every target; the variance is positive by
/// construction.
inline KrigeResult krige_residuals(const HarmonicCovariance& model,
                                   std::span<const Observation> obs,
                                   std::span<const GeoPoint> targets) {
  validate(model);
  if (!(model.nugget > 0.0))
    throw std::invalid_argument(
        "krige_residuals: nugget must be positive for the low-rank solve");
  const LowRankWorkspace ws = make_lowrank_workspace(obs, model.N);
  const double v = model.nugget;
  const Eigen::MatrixXd T = real_coeff_factor(model);
  Eigen::MatrixXd G = T.transpose() * ws.P * T;
  G.diagonal().array() += v;
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("krige_residuals: inner factorization failed");
  const Eigen::VectorXd q = llt.solve(T.transpose() * ws.b);
  KrigeResult out;
  out.predictions.reserve(targets.size());
  out.variances.reserve(targets.size());
  for (const auto& t : targets) {
    const Eigen::VectorXd w =
        T.transpose() * real_basis(model.N, t.lat, t.lon);
    out.predictions.push_back(w.dot(q));
    out.variances.push_back(
        detail::finish_variance(v * (1.0 + w.dot(llt.solve(w)))));
  }
  return out;
}

/// Direct dense solve for the same model; the cross-check path for the
/// low-rank identity above.
inline KrigeResult krige_residuals_dense(const HarmonicCovariance& model,
                                         std::span<const Observation> obs,
                                         std::span<const GeoPoint> targets) {
  validate(model);
  if (obs.empty())
    throw std::invalid_argument("krige_residuals: no observations");
  std::vector<GeoPoint> pts;
  Eigen::VectorXd z;
  detail::split_obs(obs, &pts, &z);
  const Eigen::MatrixXd C = covariance_matrix(model, pts);
  const CovarianceEvaluator ev(model);
  std::vector<LegendreTable> tables;
  tables.reserve(pts.size());
  for (const auto& p : pts)
    tables.emplace_back(model.N, std::sin(deg2rad(p.lat)));
  return detail::krige_dense_core(
      C, z, targets.size(), model.nugget,
      [&](size_t j, Eigen::VectorXd& k) {
        const LegendreTable tt(model.N, std::sin(deg2rad(targets[j].lat)));
        for (size_t i = 0; i < pts.size(); ++i)
          k[static_cast<Eigen::Index>(i)] =
              ev.covariance(tt, tables[i], targets[j].lon - pts[i].lon);
        return ev.covariance(tt, tt, 0.0);
      });
}

inline KrigeResult krige_residuals(const ExpChordalModel& model,
                                   std::span<const Observation> obs,
                                   std::span<const GeoPoint> targets) {
  validate(model);
  if (obs.empty())
    throw std::invalid_argument("krige_residuals: no observations");
  std::vector<GeoPoint> pts;
  Eigen::VectorXd z;
  detail::split_obs(obs, &pts, &z);
  const Eigen::MatrixXd C = covariance_matrix(model, pts);
  return detail::krige_dense_core(
      C, z, targets.size(), model.nugget,
      [&](size_t j, Eigen::VectorXd& k) {
        for (size_t i = 0; i < pts.size(); ++i)
          k[static_cast<Eigen::Index>(i)] =
              model.theta1 *
              std::exp(-chordal_distance(targets[j], pts[i]) / model.theta2);
        return model.theta1;
      });
}

// ---------------------------------------------------------------------------
// Per-orbit gridded product.
// ---------------------------------------------------------------------------

/// Regular prediction grid. Defaults give 1-degree latitude rows between
/// 62.5S and 57.5S crossed with 5-degree longitude columns around the full
/// circle; a full-circle longitude span omits the duplicate endpoint.
struct GridSpec {
  double lat_min = -62.5;
  double lat_max = -57.5;
  double lat_step = 1.0;
  double lon_min = -180.0;
  double lon_max = 180.0;
  double lon_step = 5.0;
};

inline void validate(const GridSpec& g) {
  if (!(g.lat_step > 0.0) || !(g.lon_step > 0.0))
    throw std::invalid_argument("grid: steps must be positive");
  if (!(g.lat_min <= g.lat_max) || !(g.lon_min <= g.lon_max))
    throw std::invalid_argument("grid: min must not exceed max");
  if (g.lat_min < -90.0 || g.lat_max > 90.0)
    throw std::invalid_argument("grid: latitudes outside [-90, 90]");
}

inline std::vector<double> grid_lats(const GridSpec& g) {
  validate(g);
  std::vector<double> out;
  for (int i = 0;; ++i) {
    const double lat = g.lat_min + i * g.lat_step;
    if (lat > g.lat_max + 1e-9) break;
    out.push_back(lat);
  }
  return out;
}

inline std::vector<double> grid_lons(const GridSpec& g) {
  validate(g);
  const bool full = g.lon_max - g.lon_min >= 360.0 - 1e-9;
  std::vector<double> out;
  for (int i = 0;; ++i) {
    const double lon = g.lon_min + i * g.lon_step;
    if (full ? lon >= g.lon_min + 360.0 - 1e-9 : lon > g.lon_max + 1e-9)
      break;
    out.push_back(lon);
  }
  return out;
}

/// Closed arc on the longitude circle starting at `start` and running
/// eastward for `width` degrees.
struct LonArc {
  double start = 0.0;
  double width = 0.0;

  bool contains(double lon) const {
    if (width >= 360.0) return true;
    double off = lon - start;
    off -= 360.0 * std::floor(off / 360.0);
    return off <= width + 1e-9;
  }
};

/// Hull of a set of longitudes on the wrapped circle: the arc through all of
/// them whose complement is the largest gap between cyclically consecutive
/// values, widened by `pad_deg` on each side. A single value hulls to a
/// 2·pad arc centered on it; the arc saturates to the full circle when the
/// padding closes the gap.
inline LonArc lon_hull(std::vector<double> lons, double pad_deg) {
  if (lons.empty()) throw std::invalid_argument("lon_hull: no longitudes");
  if (!(pad_deg >= 0.0)) throw std::invalid_argument("lon_hull: negative pad");
  for (double& l : lons) l = wrap_lon(l);
  std::sort(lons.begin(), lons.end());
  const size_t n = lons.size();
  double best_gap = 360.0 - (lons.back() - lons.front());
  size_t gap_at = n - 1;
  for (size_t i = 0; i + 1 < n; ++i) {
    const double gap = lons[i + 1] - lons[i];
    if (gap > best_gap) {
      best_gap = gap;
      gap_at = i;
    }
  }
  LonArc arc;
  arc.width = 360.0 - best_gap + 2.0 * pad_deg;
  if (arc.width >= 360.0) {
    arc.width = 360.0;
    arc.start = -180.0;
  } else {
    arc.start = wrap_lon(lons[(gap_at + 1) % n] - pad_deg);
  }
  return arc;
}

/// Inclusive latitude band selecting the observations an orbit contributes.
struct LatWindow {
  double min_deg = -65.0;
  double max_deg = -55.0;
};

/// One gridded cell value from one orbit: back-transformed to a Dobson-unit
/// median (exponentiated without lognormal mean correction) with its kriging
/// variance kept on the log scale.
struct GriddedPrediction {
  long long orbit_id = 0;
  double time_s = 0.0;
  GeoPoint point;
  double predicted_median_du = 0.0;
  double pred_variance_log = 0.0;
};

namespace detail {

struct OrbitProduct {
  std::vector<GriddedPrediction> records;
  std::string notice;
};

template <class Model>
OrbitProduct level25_orbit(const Orbit& orbit, const Model& model,
                           const MeanModel& mean,
                           std::span<const double> lats,
                           std::span<const double> lons, double pad_deg,
                           const LatWindow& window) {
  OrbitProduct out;
  std::vector<Observation> subset;
  std::vector<double> sub_lons;
  CompensatedSum time_sum;
  for (const auto& o : orbit.observations)
    if (o.point.lat >= window.min_deg && o.point.lat <= window.max_deg) {
      subset.push_back(o);
      sub_lons.push_back(o.point.lon);
      time_sum.add(o.time_s);
    }
  if (subset.empty()) {
    out.notice = "level25: orbit " + std::to_string(orbit.orbit_id) +
                 ": no observations in latitude window, skipped";
    return out;
  }
  const LonArc arc = lon_hull(sub_lons, pad_deg);
  std::vector<double> covered;
  for (double lon : lons)
    if (arc.contains(wrap_lon(lon))) covered.push_back(lon);
  if (covered.empty()) {
    out.notice = "level25: orbit " + std::to_string(orbit.orbit_id) +
                 ": no grid longitudes inside swath coverage, skipped";
    return out;
  }
  std::vector<GeoPoint> targets;
  targets.reserve(lats.size() * covered.size());
  for (double lat : lats)
    for (double lon : covered) targets.push_back(GeoPoint{lat, wrap_lon(lon)});
  const KrigeResult kr = krige_residuals(model, subset, targets);
  const double rep_time = time_sum.value() / double(subset.size());
  out.records.reserve(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) {
    GriddedPrediction rec;
    rec.orbit_id = orbit.orbit_id;
    rec.time_s = rep_time;
    rec.point = targets[i];
    rec.predicted_median_du = std::exp(
        kr.predictions[i] +
        mean_value_at(mean, targets[i].lat, targets[i].lon));
    rec.pred_variance_log = kr.variances[i];
    out.records.push_back(rec);
  }
  return out;
}

}  // namespace detail

/// Per-orbit gridded product: each orbit's in-window residuals are kriged to
/// the grid cells inside that orbit's longitudinal coverage, the mean
/// surface is added back, and the result is exponentiated (a median, not a
/// mean). Orbits are processed independently, so overlapping swaths yield
/// one record per orbit per shared cell. A nonempty `include` list restricts
/// which orbit ids contribute; orbits with nothing in the window are skipped
/// with a notice on `notices`. Records come back ordered by
/// (orbit_id, lat, lon), identically for any thread count.
template <class Model>
std::vector<GriddedPrediction> level25_product(
    std::span<const Orbit> orbits, const Model& model, const MeanModel& mean,
    const GridSpec& grid = {}, const LatWindow& window = {},
    std::span<const long long> include = {}, std::ostream* notices = nullptr,
    int threads = 1) {
  validate(model);
  validate(mean);
  if (!(window.min_deg <= window.max_deg))
    throw std::invalid_argument("level25: empty latitude window");
  const std::vector<double> lats = grid_lats(grid);
  const std::vector<double> lons = grid_lons(grid);
  std::vector<const Orbit*> picked;
  for (const auto& orbit : orbits) {
    if (!include.empty() &&
        std::find(include.begin(), include.end(), orbit.orbit_id) ==
            include.end())
      continue;
    picked.push_back(&orbit);
  }
  std::vector<detail::OrbitProduct> parts(picked.size());
  auto run = [&](size_t i) {
    parts[i] = detail::level25_orbit(*picked[i], model, mean, lats, lons,
                                     grid.lon_step, window);
  };
  const size_t n = picked.size();
  const size_t workers =
      std::min<size_t>(n, size_t(std::max(1, threads)));
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) run(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1))
            run(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::vector<GriddedPrediction> records;
  for (auto& part : parts) {
    if (!part.notice.empty() && notices) *notices << part.notice << "\n";
    records.insert(records.end(), part.records.begin(), part.records.end());
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const GriddedPrediction& a, const GriddedPrediction& b) {
                     if (a.orbit_id != b.orbit_id)
                       return a.orbit_id < b.orbit_id;
                     if (a.point.lat != b.point.lat)
                       return a.point.lat < b.point.lat;
                     return a.point.lon < b.point.lon;
                   });
  return records;
}

// ---------------------------------------------------------------------------
// Product file.
// ---------------------------------------------------------------------------

inline void write_product(std::ostream& out,
                          std::span<const GriddedPrediction> records) {
  out << "orbit_id\ttime_s\tlat_deg\tlon_deg\tozone_du_median\tvar_log\n";
  std::string row;
  for (const auto& r : records) {
    row.clear();
    row += std::to_string(r.orbit_id);
    row += '\t';
    detail::format_double(row, r.time_s);
    row += '\t';
    detail::format_double(row, r.point.lat);
    row += '\t';
    detail::format_double(row, r.point.lon);
    row += '\t';
    detail::format_double(row, r.predicted_median_du);
    row += '\t';
    detail::format_double(row, r.pred_variance_log);
    row += '\n';
    out << row;
  }
}

inline std::vector<GriddedPrediction> read_product(std::istream& in) {
  std::vector<GriddedPrediction> out;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = detail::split_fields(line);
    if (f.empty() || f[0][0] == '#') continue;
    if (!have_header) {
      if (f.size() != 6 || f[0] != "orbit_id" || f[1] != "time_s" ||
          f[2] != "lat_deg" || f[3] != "lon_deg" || f[4] != "ozone_du_median" ||
          f[5] != "var_log")
        throw std::runtime_error(
            "line " + std::to_string(line_no) +
            ": expected header 'orbit_id time_s lat_deg lon_deg "
            "ozone_du_median var_log'");
      have_header = true;
      continue;
    }
    if (f.size() != 6)
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": expected 6 fields, got " +
                               std::to_string(f.size()));
    GriddedPrediction r;
    r.orbit_id = detail::parse_int(f[0], line_no, "orbit_id");
    r.time_s = detail::parse_double(f[1], line_no, "time_s");
    const double lat = detail::parse_double(f[2], line_no, "lat_deg");
    const double lon = detail::parse_double(f[3], line_no, "lon_deg");
    if (!std::isfinite(lat) || lat < -90.0 || lat > 90.0)
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": lat_deg outside [-90, 90]");
    r.point = GeoPoint{lat, wrap_lon(lon)};
    r.predicted_median_du =
        detail::parse_double(f[4], line_no, "ozone_du_median");
    if (!(r.predicted_median_du > 0.0) || !std::isfinite(r.predicted_median_du))
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": ozone_du_median must be positive");
    r.pred_variance_log = detail::parse_double(f[5], line_no, "var_log");
    if (!(r.pred_variance_log >= 0.0))
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": var_log must be nonnegative");
    out.push_back(r);
  }
  if (!have_header) throw std::runtime_error("empty product file");
  return out;
}

}  // namespace axsym
