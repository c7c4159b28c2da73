#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <charconv>

namespace axsym {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * (kPi / 180.0); }
inline double rad2deg(double r) { return r * (180.0 / kPi); }

/// Wraps a longitude difference l1 - l2 into (-180, 180] degrees.
inline double lon_diff(double l1, double l2) {
  if (!std::isfinite(l1) || !std::isfinite(l2))
    throw std::invalid_argument("lon_diff: non-finite longitude");
  double d = std::fmod(l1 - l2, 360.0);
  if (d <= -180.0)
    d += 360.0;
  else if (d > 180.0)
    d -= 360.0;
  return d;
}

inline double wrap_lon(double lon) { return lon_diff(lon, 0.0); }

/// Point on the sphere, degrees. lat in [-90, 90], lon in (-180, 180].
struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

inline bool point_valid(const GeoPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 &&
         p.lat <= 90.0 && p.lon > -180.0 && p.lon <= 180.0;
}

/// Validates latitude and wraps longitude into the canonical range.
inline GeoPoint make_point(double lat_deg, double lon_deg) {
  if (!std::isfinite(lat_deg) || lat_deg < -90.0 || lat_deg > 90.0)
    throw std::invalid_argument("make_point: latitude " +
                                std::to_string(lat_deg) +
                                " outside [-90, 90]");
  return GeoPoint{lat_deg, wrap_lon(lon_deg)};
}

inline std::array<double, 3> unit_vector(const GeoPoint& p) {
  const double lat = deg2rad(p.lat), lon = deg2rad(p.lon);
  const double c = std::cos(lat);
  return {c * std::cos(lon), c * std::sin(lon), std::sin(lat)};
}

/// Great-circle angle between two points, in degrees, in [0, 180].
/// atan2 of cross/dot keeps full accuracy for both tiny and near-antipodal
/// separations, where acos of the dot product loses digits.
inline double central_angle(const GeoPoint& a, const GeoPoint& b) {
  if (!point_valid(a) || !point_valid(b))
    throw std::invalid_argument("central_angle: invalid point");
  const auto u = unit_vector(a), v = unit_vector(b);
  const double cx = u[1] * v[2] - u[2] * v[1];
  const double cy = u[2] * v[0] - u[0] * v[2];
  const double cz = u[0] * v[1] - u[1] * v[0];
  const double cross = std::sqrt(cx * cx + cy * cy + cz * cz);
  const double dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
  return rad2deg(std::atan2(cross, dot));
}

/// Euclidean chord length between two points on the unit sphere, in [0, 2].
inline double chordal_distance(const GeoPoint& a, const GeoPoint& b) {
  if (!point_valid(a) || !point_valid(b))
    throw std::invalid_argument("chordal_distance: invalid point");
  const auto u = unit_vector(a), v = unit_vector(b);
  const double dx = u[0] - v[0], dy = u[1] - v[1], dz = u[2] - v[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// One measurement. `value` is on the log scale: log total ozone for raw
/// ingests, or a log-scale residual once the mean surface is removed.
struct Observation {
  long long orbit_id = 0;
  double time_s = 0.0;
  GeoPoint point;
  double value = 0.0;
};

struct Orbit {
  long long orbit_id = 0;
  std::vector<Observation> observations;  // time-ordered
};

/// Groups observations by orbit id, each orbit sorted by time (stable for
/// ties). Orbits come back sorted by id.
inline std::vector<Orbit> group_orbits(std::span<const Observation> obs) {
  std::vector<const Observation*> ptrs;
  ptrs.reserve(obs.size());
  for (const auto& o : obs) ptrs.push_back(&o);
  std::stable_sort(ptrs.begin(), ptrs.end(),
                   [](const Observation* a, const Observation* b) {
                     if (a->orbit_id != b->orbit_id)
                       return a->orbit_id < b->orbit_id;
                     return a->time_s < b->time_s;
                   });
  std::vector<Orbit> out;
  for (const Observation* p : ptrs) {
    if (out.empty() || out.back().orbit_id != p->orbit_id)
      out.push_back(Orbit{p->orbit_id, {}});
    out.back().observations.push_back(*p);
  }
  return out;
}

/// What the fifth column of an observation file holds.
enum class ValueKind { kOzoneDu, kResidualLog };

struct ObservationFile {
  std::vector<Observation> observations;
  ValueKind kind = ValueKind::kOzoneDu;
};

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' ||
                               line[i] == ',' || line[i] == '\r'))
      ++i;
    size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' &&
           line[j] != ',' && line[j] != '\r')
      ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_double(std::string_view s, int line_no,
                           const char* column) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::runtime_error("line " + std::to_string(line_no) + ": " +
                             column + " is not a number: '" + std::string(s) +
                             "'");
  return v;
}

inline long long parse_int(std::string_view s, int line_no,
                           const char* column) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw std::runtime_error("line " + std::to_string(line_no) + ": " +
                             column + " is not an integer: '" +
                             std::string(s) + "'");
  return v;
}

inline void format_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

}  // namespace detail

/// Reads whitespace- or comma-delimited rows of
///   orbit_id  time_s  lat_deg  lon_deg  ozone_du|residual_log
/// Header row is required and names the value column. Ozone values are
/// stored as log(DU); residual files are stored as-is. Longitudes are
/// wrapped into (-180, 180]; bad rows report their 1-based line number.
inline ObservationFile read_observations(std::istream& in) {
  ObservationFile file;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto f = detail::split_fields(line);
    if (f.empty() || f[0][0] == '#') continue;
    if (!have_header) {
      if (f.size() != 5 || f[0] != "orbit_id" || f[1] != "time_s" ||
          f[2] != "lat_deg" || f[3] != "lon_deg" ||
          (f[4] != "ozone_du" && f[4] != "residual_log"))
        throw std::runtime_error(
            "line " + std::to_string(line_no) +
            ": expected header 'orbit_id time_s lat_deg lon_deg "
            "ozone_du|residual_log'");
      file.kind =
          f[4] == "ozone_du" ? ValueKind::kOzoneDu : ValueKind::kResidualLog;
      have_header = true;
      continue;
    }
    if (f.size() != 5)
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": expected 5 fields, got " +
                               std::to_string(f.size()));
    Observation o;
    o.orbit_id = detail::parse_int(f[0], line_no, "orbit_id");
    if (o.orbit_id < 0)
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": orbit_id must be nonnegative");
    o.time_s = detail::parse_double(f[1], line_no, "time_s");
    const double lat = detail::parse_double(f[2], line_no, "lat_deg");
    const double lon = detail::parse_double(f[3], line_no, "lon_deg");
    if (!std::isfinite(lat) || lat < -90.0 || lat > 90.0)
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": lat_deg outside [-90, 90]");
    if (!std::isfinite(lon))
      throw std::runtime_error("line " + std::to_string(line_no) +
                               ": lon_deg is not finite");
    o.point = GeoPoint{lat, wrap_lon(lon)};
    const double v = detail::parse_double(
        f[4], line_no,
        file.kind == ValueKind::kOzoneDu ? "ozone_du" : "residual_log");
    if (file.kind == ValueKind::kOzoneDu) {
      if (!(v > 0.0) || !std::isfinite(v))
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": ozone_du must be positive and finite");
      o.value = std::log(v);
    } else {
      if (!std::isfinite(v))
        throw std::runtime_error("line " + std::to_string(line_no) +
                                 ": residual_log must be finite");
      o.value = v;
    }
    file.observations.push_back(o);
  }
  if (!have_header) throw std::runtime_error("empty observation file");
  return file;
}

/// Tab-separated writer, 17 significant digits. kOzoneDu exponentiates the
/// stored log value back to DU; kResidualLog writes the value as held.
inline void write_observations(std::ostream& out,
                               std::span<const Observation> obs,
                               ValueKind kind) {
  out << "orbit_id\ttime_s\tlat_deg\tlon_deg\t"
      << (kind == ValueKind::kOzoneDu ? "ozone_du" : "residual_log") << "\n";
  std::string row;
  for (const auto& o : obs) {
    row.clear();
    row += std::to_string(o.orbit_id);
    row += '\t';
    detail::format_double(row, o.time_s);
    row += '\t';
    detail::format_double(row, o.point.lat);
    row += '\t';
    detail::format_double(row, o.point.lon);
    row += '\t';
    detail::format_double(
        row, kind == ValueKind::kOzoneDu ? std::exp(o.value) : o.value);
    row += '\n';
    out << row;
  }
}

/// Neumaier-compensated accumulator; keeps long sums of squared
/// differences honest.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x))
      comp += (sum - t) + x;
    else
      comp += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

}  // namespace axsym
