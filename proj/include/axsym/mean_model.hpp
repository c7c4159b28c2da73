#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "axsym/geo.hpp"
#include "axsym/harmonics.hpp"

namespace axsym {

/// Spatial mean surface: 78 coefficients aligned with mean_design_row.
struct MeanModel {
  std::vector<double> coefficients;
};

inline void validate(const MeanModel& model) {
  if (model.coefficients.size() != size_t(kMeanDesignCols))
    throw std::invalid_argument("MeanModel: expected " +
                                std::to_string(kMeanDesignCols) +
                                " coefficients, got " +
                                std::to_string(model.coefficients.size()));
  for (double c : model.coefficients)
    if (!std::isfinite(c))
      throw std::invalid_argument("MeanModel: non-finite coefficient");
}

struct BinAverage {
  double mean_lat = 0.0;
  double mean_lon = 0.0;
  double mean_value = 0.0;
  long long count = 0;
};

/// Averages observations over half-open 1° by 2° cells anchored at
/// (-90, -180). The top latitude edge (exactly 90) folds into the last
/// cell; longitude 180 wraps to the -180 cell. Output is ordered by
/// (lat cell, lon cell); empty cells are omitted.
inline std::vector<BinAverage> bin_average(std::span<const Observation> obs) {
  struct Accum {
    long long count = 0;
    CompensatedSum lat, lon, value;
  };
  std::map<std::pair<int, int>, Accum> cells;
  for (const auto& o : obs) {
    const double lon = o.point.lon >= 180.0 ? o.point.lon - 360.0 : o.point.lon;
    int ci = static_cast<int>(std::floor(o.point.lat + 90.0));
    if (ci > 179) ci = 179;
    const int cj = static_cast<int>(std::floor((lon + 180.0) / 2.0));
    auto& cell = cells[{ci, cj}];
    ++cell.count;
    cell.lat.add(o.point.lat);
    cell.lon.add(lon);
    cell.value.add(o.value);
  }
  std::vector<BinAverage> out;
  out.reserve(cells.size());
  for (const auto& [key, acc] : cells) {
    BinAverage b;
    b.count = acc.count;
    b.mean_lat = acc.lat.value() / double(acc.count);
    b.mean_lon = acc.lon.value() / double(acc.count);
    b.mean_value = acc.value.value() / double(acc.count);
    out.push_back(b);
  }
  return out;
}

inline double mean_value_at(const MeanModel& model, double lat_deg,
                            double lon_deg) {
  const Eigen::VectorXd row = mean_design_row(lat_deg, lon_deg);
  return row.dot(Eigen::Map<const Eigen::VectorXd>(model.coefficients.data(),
                                                   kMeanDesignCols));
}

namespace detail {

inline double r_squared_core(std::span<const double> y,
                             std::span<const double> yhat) {
  CompensatedSum mean_sum;
  for (double v : y) mean_sum.add(v);
  const double mean = mean_sum.value() / double(y.size());
  CompensatedSum sst, ssr;
  for (size_t i = 0; i < y.size(); ++i) {
    sst.add((y[i] - mean) * (y[i] - mean));
    ssr.add((y[i] - yhat[i]) * (y[i] - yhat[i]));
  }
  if (sst.value() <= 0.0) {
    // no variation to explain: call the fit perfect when its residual is
    // zero at the data's own scale
    const double scale = double(y.size()) * std::max(1.0, mean * mean);
    return ssr.value() <= 1e-20 * scale
               ? 1.0
               : -std::numeric_limits<double>::infinity();
  }
  return 1.0 - ssr.value() / sst.value();
}

}  // namespace detail

inline double r_squared(std::span<const BinAverage> bins,
                        const MeanModel& model) {
  validate(model);
  std::vector<double> y(bins.size()), yhat(bins.size());
  for (size_t i = 0; i < bins.size(); ++i) {
    y[i] = bins[i].mean_value;
    yhat[i] = mean_value_at(model, bins[i].mean_lat, bins[i].mean_lon);
  }
  return detail::r_squared_core(y, yhat);
}

inline double r_squared(std::span<const Observation> obs,
                        const MeanModel& model) {
  validate(model);
  std::vector<double> y(obs.size()), yhat(obs.size());
  for (size_t i = 0; i < obs.size(); ++i) {
    y[i] = obs[i].value;
    yhat[i] = mean_value_at(model, obs[i].point.lat, obs[i].point.lon);
  }
  return detail::r_squared_core(y, yhat);
}

/// Ordinary least squares on bin averages via rank-revealing QR. Throws a
/// singular-fit error naming the deficient design columns when the matrix
/// is not full column rank.
inline MeanModel fit_mean_bins(std::span<const BinAverage> bins) {
  const auto cols = static_cast<Eigen::Index>(kMeanDesignCols);
  if (static_cast<Eigen::Index>(bins.size()) < cols)
    throw std::runtime_error("singular mean fit: need at least " +
                             std::to_string(kMeanDesignCols) +
                             " bins, got " + std::to_string(bins.size()));
  Eigen::MatrixXd X(bins.size(), cols);
  Eigen::VectorXd y(bins.size());
  for (size_t i = 0; i < bins.size(); ++i) {
    X.row(static_cast<Eigen::Index>(i)) =
        mean_design_row(bins[i].mean_lat, bins[i].mean_lon).transpose();
    y[static_cast<Eigen::Index>(i)] = bins[i].mean_value;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < cols) {
    const auto terms = mean_design_terms();
    const auto& perm = qr.colsPermutation().indices();
    std::string msg = "singular mean fit: deficient columns";
    for (Eigen::Index c = qr.rank(); c < cols; ++c) {
      const auto& t = terms[size_t(perm[c])];
      msg += " (" + std::to_string(t.n) + "," + std::to_string(t.m) + "," +
             (t.sine ? "sin" : "cos") + ")";
    }
    throw std::runtime_error(msg);
  }
  Eigen::VectorXd beta = qr.solve(y);
  MeanModel model;
  model.coefficients.assign(beta.data(), beta.data() + cols);
  return model;
}

struct MeanFit {
  MeanModel model;
  double r2_bins = 0.0;
  double r2_raw = 0.0;
  size_t bin_count = 0;
};

/// Bins the observations, fits by OLS, and reports the fraction of
/// variation explained both on the bin averages the fit used and on the
/// raw observations.
inline MeanFit fit_mean(std::span<const Observation> obs) {
  MeanFit fit;
  const auto bins = bin_average(obs);
  fit.bin_count = bins.size();
  fit.model = fit_mean_bins(bins);
  fit.r2_bins = r_squared(std::span<const BinAverage>(bins), fit.model);
  fit.r2_raw = r_squared(obs, fit.model);
  return fit;
}

/// Subtracts the fitted mean surface; every other field is preserved.
inline std::vector<Observation> residuals(std::span<const Observation> obs,
                                          const MeanModel& model) {
  validate(model);
  std::vector<Observation> out(obs.begin(), obs.end());
  for (auto& o : out)
    o.value -= mean_value_at(model, o.point.lat, o.point.lon);
  return out;
}

inline void write_mean_model(std::ostream& out, const MeanModel& model) {
  validate(model);
  out << "axsym-mean-model\ncols " << kMeanDesignCols << "\n";
  const auto terms = mean_design_terms();
  std::string row;
  for (size_t i = 0; i < size_t(kMeanDesignCols); ++i) {
    row.clear();
    row += std::to_string(terms[i].n);
    row += '\t';
    row += std::to_string(terms[i].m);
    row += '\t';
    row += terms[i].sine ? "sin" : "cos";
    row += '\t';
    detail::format_double(row, model.coefficients[i]);
    row += '\n';
    out << row;
  }
}

inline MeanModel read_mean_model(std::istream& in) {
  std::string line;
  int line_no = 0;
  auto next_line = [&](const char* what) {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      return;
    }
    throw std::runtime_error(std::string("mean model file: missing ") + what);
  };
  next_line("header");
  if (line != "axsym-mean-model")
    throw std::runtime_error("mean model file line " +
                             std::to_string(line_no) +
                             ": expected 'axsym-mean-model'");
  next_line("cols line");
  {
    const auto f = detail::split_fields(line);
    if (f.size() != 2 || f[0] != "cols" ||
        detail::parse_int(f[1], line_no, "cols") !=
            static_cast<long long>(kMeanDesignCols))
      throw std::runtime_error("mean model file line " +
                               std::to_string(line_no) + ": expected 'cols " +
                               std::to_string(kMeanDesignCols) + "'");
  }
  const auto terms = mean_design_terms();
  MeanModel model;
  model.coefficients.resize(kMeanDesignCols);
  for (size_t i = 0; i < size_t(kMeanDesignCols); ++i) {
    next_line("coefficient row");
    const auto f = detail::split_fields(line);
    if (f.size() != 4)
      throw std::runtime_error("mean model file line " +
                               std::to_string(line_no) +
                               ": expected 'n m trig coefficient'");
    const auto n = detail::parse_int(f[0], line_no, "n");
    const auto m = detail::parse_int(f[1], line_no, "m");
    const bool sine = f[2] == "sin";
    if (!sine && f[2] != "cos")
      throw std::runtime_error("mean model file line " +
                               std::to_string(line_no) +
                               ": trig must be cos or sin");
    if (n != terms[i].n || m != terms[i].m || sine != terms[i].sine)
      throw std::runtime_error("mean model file line " +
                               std::to_string(line_no) +
                               ": term out of order, expected (" +
                               std::to_string(terms[i].n) + "," +
                               std::to_string(terms[i].m) + "," +
                               (terms[i].sine ? "sin" : "cos") + ")");
    model.coefficients[i] = detail::parse_double(f[3], line_no, "coefficient");
  }
  validate(model);
  return model;
}

}  // namespace axsym
