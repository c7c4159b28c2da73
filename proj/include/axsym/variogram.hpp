#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "axsym/geo.hpp"

namespace axsym {

/// Pair admission windows for the binned empirical variogram. The first
/// point of every ordered pair must fall in a latitude band
/// [anchor·p, anchor·p + band_width) for an integer p in [p_min, p_max];
/// the second must lie within the lat/lon offset windows (half-open on the
/// positive side).
struct PairConfig {
  double band_anchor_step = 10.0;
  double band_width = 1.0;
  int p_min = -7;
  int p_max = 8;
  double max_lat_offset = 9.0;
  double max_lon_offset = 20.0;
  double lat_bin = 1.0;
  double lon_bin = 1.0;
};

inline void validate(const PairConfig& cfg) {
  if (!(cfg.band_anchor_step > 0) || !(cfg.band_width > 0) ||
      !(cfg.max_lat_offset > 0) || !(cfg.max_lon_offset > 0) ||
      !(cfg.lat_bin > 0) || !(cfg.lon_bin > 0) || cfg.p_min > cfg.p_max)
    throw std::invalid_argument("PairConfig: window fields must be positive");
}

/// One variogram bin. Offsets are first minus second: mean_dlat averages
/// L_first − L_second, mean_dlon averages lon_diff(l_first, l_second).
/// gamma_hat is half the mean squared value difference over `count` pairs.
struct VariogramRecord {
  double L0 = 0.0;  // lower edge of the first point's latitude band
  int j = 0;        // floor(dlat / lat_bin)
  int k = 0;        // floor(dlon / lon_bin)
  double mean_dlat = 0.0;
  double mean_dlon = 0.0;
  double gamma_hat = 0.0;
  long long count = 0;
};

namespace detail {

/// Band index of a first-point latitude, or nullopt-like false.
inline bool first_band(double lat, const PairConfig& cfg, int* p_out) {
  const double p_real = std::floor(lat / cfg.band_anchor_step);
  const int p = static_cast<int>(p_real);
  if (p < cfg.p_min || p > cfg.p_max) return false;
  const double off = lat - p * cfg.band_anchor_step;
  if (!(off >= 0.0 && off < cfg.band_width)) return false;
  *p_out = p;
  return true;
}

struct BinAccum {
  long long count = 0;
  CompensatedSum dlat, dlon, sqdiff;
};

using BinMap = std::map<std::tuple<int, int, int>, BinAccum>;

/// Visits admissible ordered pairs with firsts from `firsts` and seconds
/// from `seconds`; when the two spans alias the same orbit, self-pairs are
/// skipped by index.
template <typename Visit>
void visit_pairs(std::span<const Observation> firsts,
                 std::span<const Observation> seconds, bool same_orbit,
                 const PairConfig& cfg, Visit&& visit) {
  // seconds indexed by latitude so each first only scans its window
  std::vector<std::pair<double, size_t>> by_lat(seconds.size());
  for (size_t i = 0; i < seconds.size(); ++i)
    by_lat[i] = {seconds[i].point.lat, i};
  std::sort(by_lat.begin(), by_lat.end());
  for (size_t i = 0; i < firsts.size(); ++i) {
    int p = 0;
    if (!first_band(firsts[i].point.lat, cfg, &p)) continue;
    const double lat1 = firsts[i].point.lat;
    // dlat = lat1 − lat2 ∈ [−max, max) ⟺ lat2 ∈ (lat1 − max, lat1 + max]
    auto lo = std::upper_bound(by_lat.begin(), by_lat.end(),
                               std::make_pair(lat1 - cfg.max_lat_offset,
                                              std::numeric_limits<size_t>::max()));
    auto hi = std::upper_bound(by_lat.begin(), by_lat.end(),
                               std::make_pair(lat1 + cfg.max_lat_offset,
                                              std::numeric_limits<size_t>::max()));
    for (auto it = lo; it != hi; ++it) {
      const size_t jdx = it->second;
      if (same_orbit && jdx == i) continue;
      const double dlat = lat1 - seconds[jdx].point.lat;
      if (!(dlat >= -cfg.max_lat_offset && dlat < cfg.max_lat_offset))
        continue;
      const double dlon =
          lon_diff(firsts[i].point.lon, seconds[jdx].point.lon);
      if (!(dlon >= -cfg.max_lon_offset && dlon < cfg.max_lon_offset))
        continue;
      visit(p, i, jdx, dlat, dlon);
    }
  }
}

inline void accumulate_orbit_pair(std::span<const Observation> firsts,
                                  std::span<const Observation> seconds,
                                  bool same_orbit, const PairConfig& cfg,
                                  BinMap& bins) {
  visit_pairs(firsts, seconds, same_orbit, cfg,
              [&](int p, size_t i, size_t jdx, double dlat, double dlon) {
                const int j =
                    static_cast<int>(std::floor(dlat / cfg.lat_bin));
                const int k =
                    static_cast<int>(std::floor(dlon / cfg.lon_bin));
                auto& bin = bins[{p, j, k}];
                ++bin.count;
                bin.dlat.add(dlat);
                bin.dlon.add(dlon);
                const double d = firsts[i].value - seconds[jdx].value;
                bin.sqdiff.add(d * d);
              });
}

inline std::vector<VariogramRecord> records_from_bins(const BinMap& bins,
                                                      const PairConfig& cfg) {
  std::vector<VariogramRecord> out;
  out.reserve(bins.size());
  for (const auto& [key, acc] : bins) {
    VariogramRecord r;
    r.L0 = std::get<0>(key) * cfg.band_anchor_step;
    r.j = std::get<1>(key);
    r.k = std::get<2>(key);
    r.count = acc.count;
    r.mean_dlat = acc.dlat.value() / double(acc.count);
    r.mean_dlon = acc.dlon.value() / double(acc.count);
    r.gamma_hat = acc.sqdiff.value() / (2.0 * double(acc.count));
    out.push_back(r);
  }
  return out;  // map iteration order keys the output deterministically
}

}  // namespace detail

/// Materialized ordered admissible pairs of one orbit (index pairs into
/// orbit.observations). Intended for verification at small scale; the
/// binning paths stream instead of materializing.
inline std::vector<std::pair<size_t, size_t>> enumerate_pairs(
    const Orbit& orbit, const PairConfig& cfg) {
  validate(cfg);
  std::vector<std::pair<size_t, size_t>> out;
  detail::visit_pairs(orbit.observations, orbit.observations, true, cfg,
                      [&](int, size_t i, size_t j, double, double) {
                        out.emplace_back(i, j);
                      });
  std::sort(out.begin(), out.end());
  return out;
}

/// Pooled within-orbit variogram over all orbits. Bins are keyed by
/// (band, j, k); sums use compensated accumulation, so the output does not
/// depend on pair enumeration order beyond roundoff-free reordering.
inline std::vector<VariogramRecord> bin_variogram(std::span<const Orbit> orbits,
                                                  const PairConfig& cfg) {
  validate(cfg);
  detail::BinMap bins;
  for (const auto& orbit : orbits)
    detail::accumulate_orbit_pair(orbit.observations, orbit.observations,
                                  true, cfg, bins);
  return detail::records_from_bins(bins, cfg);
}

inline std::vector<VariogramRecord> bin_variogram(const Orbit& orbit,
                                                  const PairConfig& cfg) {
  return bin_variogram(std::span<const Orbit>(&orbit, 1), cfg);
}

/// Cross-orbit variant: the second observation comes from the orbit with id
/// first_orbit_id + t. Orbits whose partner id is absent contribute
/// nothing. t = 0 reproduces bin_variogram exactly.
inline std::vector<VariogramRecord> cross_orbit_variogram(
    std::span<const Orbit> orbits, int t, const PairConfig& cfg) {
  validate(cfg);
  detail::BinMap bins;
  for (const auto& first_orbit : orbits) {
    const long long want = first_orbit.orbit_id + t;
    const Orbit* partner = nullptr;
    for (const auto& o : orbits)
      if (o.orbit_id == want) {
        partner = &o;
        break;
      }
    if (!partner) continue;
    detail::accumulate_orbit_pair(first_orbit.observations,
                                  partner->observations, t == 0, cfg, bins);
  }
  return detail::records_from_bins(bins, cfg);
}

inline void write_variogram(std::ostream& out,
                            std::span<const VariogramRecord> records) {
  out << "L0\tj\tk\tmean_dlat\tmean_dlon\tgamma_hat\tcount\n";
  std::string row;
  for (const auto& r : records) {
    row.clear();
    detail::format_double(row, r.L0);
    row += '\t';
    row += std::to_string(r.j);
    row += '\t';
    row += std::to_string(r.k);
    row += '\t';
    detail::format_double(row, r.mean_dlat);
    row += '\t';
    detail::format_double(row, r.mean_dlon);
    row += '\t';
    detail::format_double(row, r.gamma_hat);
    row += '\t';
    row += std::to_string(r.count);
    row += '\n';
    out << row;
  }
}

inline std::vector<VariogramRecord> read_variogram(std::istream& in) {
  std::vector<VariogramRecord> out;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = detail::split_fields(line);
    if (f.empty() || f[0][0] == '#') continue;
    if (!have_header) {
      if (f.size() != 7 || f[0] != "L0" || f[1] != "j" || f[2] != "k" ||
          f[3] != "mean_dlat" || f[4] != "mean_dlon" || f[5] != "gamma_hat" ||
          f[6] != "count")
        throw std::runtime_error(
            "variogram file line " + std::to_string(line_no) +
            ": expected header 'L0 j k mean_dlat mean_dlon gamma_hat count'");
      have_header = true;
      continue;
    }
    if (f.size() != 7)
      throw std::runtime_error("variogram file line " +
                               std::to_string(line_no) +
                               ": expected 7 fields");
    VariogramRecord r;
    r.L0 = detail::parse_double(f[0], line_no, "L0");
    r.j = static_cast<int>(detail::parse_int(f[1], line_no, "j"));
    r.k = static_cast<int>(detail::parse_int(f[2], line_no, "k"));
    r.mean_dlat = detail::parse_double(f[3], line_no, "mean_dlat");
    r.mean_dlon = detail::parse_double(f[4], line_no, "mean_dlon");
    r.gamma_hat = detail::parse_double(f[5], line_no, "gamma_hat");
    r.count = detail::parse_int(f[6], line_no, "count");
    if (r.count < 1)
      throw std::runtime_error("variogram file line " +
                               std::to_string(line_no) + ": count must be >= 1");
    out.push_back(r);
  }
  if (!have_header) throw std::runtime_error("empty variogram file");
  return out;
}

}  // namespace axsym
