#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "axsym/geo.hpp"

namespace axsym {

namespace detail {

inline void check_legendre_args(int n, int m, double x) {
  if (n < 0 || m < 0 || m > n)
    throw std::invalid_argument("legendre: need 0 <= m <= n, got n=" +
                                std::to_string(n) + " m=" + std::to_string(m));
  if (!(x >= -1.0 && x <= 1.0))
    throw std::invalid_argument("legendre: x outside [-1, 1]");
}

}  // namespace detail

/// Unnormalized associated Legendre P_n^m(x) without the Condon-Shortley
/// phase, so P_n^m >= 0 near x = 1. Standard three-term recurrence in n
/// after seeding P_m^m = (2m-1)!! (1-x^2)^{m/2}.
inline double legendre_assoc(int n, int m, double x) {
  detail::check_legendre_args(n, m, x);
  double pmm = 1.0;
  if (m > 0) {
    const double s = std::sqrt((1.0 - x) * (1.0 + x));
    double fact = 1.0;
    for (int i = 1; i <= m; ++i) {
      pmm *= fact * s;
      fact += 2.0;
    }
  }
  if (n == m) return pmm;
  double pm1 = x * (2 * m + 1) * pmm;  // P_{m+1}^m
  if (n == m + 1) return pm1;
  double p = 0.0;
  for (int k = m + 2; k <= n; ++k) {
    p = (x * (2 * k - 1) * pm1 - (k + m - 1) * pmm) / (k - m);
    pmm = pm1;
    pm1 = p;
  }
  return p;
}

/// Fills out[0..count) with normalized values P̄_m^m(x) .. P̄_{m+count-1}^m(x),
/// where the normalization makes the squared integral over [-1, 1] equal 1:
/// P̄_n^m = sqrt((2n+1)/2 · (n-m)!/(n+m)!) · P_n^m. The recurrence works
/// directly on the normalized values, which stays stable far beyond the
/// degrees used here.
inline void legendre_norm_span(int m, double x, std::span<double> out) {
  if (out.empty()) return;
  const int n_top = m + static_cast<int>(out.size()) - 1;
  detail::check_legendre_args(n_top, m, x);
  const double s = std::sqrt((1.0 - x) * (1.0 + x));
  double pmm = std::sqrt(0.5);  // P̄_0^0
  for (int i = 1; i <= m; ++i)
    pmm *= std::sqrt((2.0 * i + 1.0) / (2.0 * i)) * s;
  out[0] = pmm;
  if (out.size() == 1) return;
  double prev = pmm;
  double cur = x * std::sqrt(2.0 * m + 3.0) * pmm;  // P̄_{m+1}^m
  out[1] = cur;
  for (size_t idx = 2; idx < out.size(); ++idx) {
    const int n = m + static_cast<int>(idx);
    const double a =
        std::sqrt((4.0 * n * n - 1.0) / (double(n) * n - double(m) * m));
    const double a_prev = std::sqrt((4.0 * (n - 1.0) * (n - 1.0) - 1.0) /
                                    ((n - 1.0) * (n - 1.0) - double(m) * m));
    const double next = a * (x * cur - prev / a_prev);
    prev = cur;
    cur = next;
    out[idx] = cur;
  }
}

inline double legendre_norm(int n, int m, double x) {
  detail::check_legendre_args(n, m, x);
  std::vector<double> buf(n - m + 1);
  legendre_norm_span(m, x, buf);
  return buf.back();
}

/// All normalized values P̄_n^m(x) for 0 <= m <= n <= n_max, packed
/// column-major by order: entry (m, n) lives at offset(m) + n - m with
/// offset(m) = m*(n_max+1) - m(m-1)/2.
class LegendreTable {
 public:
  LegendreTable(int n_max, double x) : n_max_(n_max) {
    vals_.resize((n_max + 1) * (n_max + 2) / 2);
    for (int m = 0; m <= n_max; ++m)
      legendre_norm_span(m, x, std::span<double>(&vals_[offset(m)],
                                                 size_t(n_max - m + 1)));
  }
  double operator()(int n, int m) const { return vals_[offset(m) + n - m]; }
  int n_max() const { return n_max_; }

 private:
  int offset(int m) const { return m * (n_max_ + 1) - m * (m - 1) / 2; }
  int n_max_;
  std::vector<double> vals_;
};

/// Precomputed P̄_n^m(sin θ) on a 0.25-degree grid over θ ∈ [-90, 90] with a
/// per-channel cubic spline through the exact values. Not-a-knot end
/// conditions; natural ends lose too much accuracy in the polar boundary
/// intervals to serve as a drop-in for the recurrence.
class SplineTable {
 public:
  static constexpr double kStepDeg = 0.25;
  static constexpr int kKnots = 721;

  explicit SplineTable(int n_max) : n_max_(n_max) {
    if (n_max < 0) throw std::invalid_argument("SplineTable: n_max < 0");
    const int ch = channels();
    values_.resize(size_t(ch) * kKnots);
    for (int k = 0; k < kKnots; ++k) {
      const double theta = -90.0 + k * kStepDeg;
      const LegendreTable t(n_max, std::sin(deg2rad(theta)));
      for (int m = 0; m <= n_max; ++m)
        for (int n = m; n <= n_max; ++n)
          values_[size_t(channel(n, m)) * kKnots + k] = t(n, m);
    }
    fit_all();
  }

  int n_max() const { return n_max_; }
  int channels() const { return (n_max_ + 1) * (n_max_ + 2) / 2; }

  /// P̄_n^m(sin θ) via the spline. Exact (bitwise) at the knots.
  double eval(int n, int m, double theta_deg) const {
    if (n < 0 || m < 0 || m > n || n > n_max_)
      throw std::invalid_argument("SplineTable::eval: bad (n, m)");
    if (!(theta_deg >= -90.0 && theta_deg <= 90.0))
      throw std::invalid_argument("SplineTable::eval: theta outside [-90, 90]");
    const int ch = channel(n, m);
    int i = static_cast<int>(std::floor((theta_deg + 90.0) / kStepDeg));
    if (i >= kKnots - 1) {
      // exact right endpoint, or clamp into the last interval
      if (theta_deg == -90.0 + (kKnots - 1) * kStepDeg)
        return values_[size_t(ch) * kKnots + (kKnots - 1)];
      i = kKnots - 2;
    }
    const double t = theta_deg - (-90.0 + i * kStepDeg);
    if (t == 0.0) return values_[size_t(ch) * kKnots + i];
    const size_t idx = size_t(ch) * (kKnots - 1) + i;
    const size_t vi = size_t(ch) * kKnots + i;
    return values_[vi] + t * (b_[idx] + t * (c_[idx] + t * d_[idx]));
  }

 private:
  int channel(int n, int m) const {
    return m * (n_max_ + 1) - m * (m - 1) / 2 + (n - m);
  }

  void fit_all() {
    const int ch = channels();
    b_.resize(size_t(ch) * (kKnots - 1));
    c_.resize(size_t(ch) * (kKnots - 1));
    d_.resize(size_t(ch) * (kKnots - 1));
    for (int c = 0; c < ch; ++c) fit_channel(c);
  }

  // Solve for knot second derivatives M with not-a-knot ends on a uniform
  // grid: continuity of the third derivative across the first and last
  // interior knots gives M_0 - 2M_1 + M_2 = 0 and its mirror, which reduces
  // to M_1 = r_1/6, M_{K-2} = r_{K-2}/6 and a strictly tridiagonal solve for
  // the interior.
  void fit_channel(int c) {
    const int K = kKnots;
    const double h = kStepDeg;
    const double* y = &values_[size_t(c) * K];
    std::vector<double> r(K), M(K, 0.0);
    for (int i = 1; i < K - 1; ++i)
      r[i] = 6.0 * (y[i - 1] - 2.0 * y[i] + y[i + 1]) / (h * h);
    M[1] = r[1] / 6.0;
    M[K - 2] = r[K - 2] / 6.0;
    // Thomas algorithm for M_2..M_{K-3}: M_{i-1} + 4 M_i + M_{i+1} = r_i
    const int lo = 2, hi = K - 3;
    if (lo <= hi) {
      const int n = hi - lo + 1;
      std::vector<double> cp(n), dp(n);
      double rhs0 = r[lo] - M[1];
      cp[0] = 1.0 / 4.0;
      dp[0] = rhs0 / 4.0;
      for (int i = 1; i < n; ++i) {
        const double rhs = r[lo + i] - (lo + i == hi ? M[K - 2] : 0.0);
        const double denom = 4.0 - cp[i - 1];
        cp[i] = 1.0 / denom;
        dp[i] = (rhs - dp[i - 1]) / denom;
      }
      M[hi] = dp[n - 1];
      for (int i = n - 2; i >= 0; --i) M[lo + i] = dp[i] - cp[i] * M[lo + i + 1];
    }
    M[0] = 2.0 * M[1] - M[2];
    M[K - 1] = 2.0 * M[K - 2] - M[K - 3];
    double* b = &b_[size_t(c) * (K - 1)];
    double* cc = &c_[size_t(c) * (K - 1)];
    double* d = &d_[size_t(c) * (K - 1)];
    for (int i = 0; i < K - 1; ++i) {
      b[i] = (y[i + 1] - y[i]) / h - h * (2.0 * M[i] + M[i + 1]) / 6.0;
      cc[i] = M[i] / 2.0;
      d[i] = (M[i + 1] - M[i]) / (6.0 * h);
    }
  }

  int n_max_;
  std::vector<double> values_;   // [channel][knot]
  std::vector<double> b_, c_, d_;  // [channel][interval]
};

/// Real basis of the truncated harmonic model at (L, l), length (N+1)².
/// Ordering (fixed): first P̄_n^0(sin L) for n = 0..N; then for each m =
/// 1..N and each n = m..N the pair √2·P̄_n^m(sin L)·cos(m·l),
/// √2·P̄_n^m(sin L)·sin(m·l). The √2 on m >= 1 makes this basis an exact
/// real carrier of the complex model: see real_coeff_covariance.
inline Eigen::VectorXd real_basis(int N, double lat_deg, double lon_deg,
                                  const SplineTable* table = nullptr) {
  if (N < 0) throw std::invalid_argument("real_basis: N < 0");
  if (table && N > table->n_max())
    throw std::invalid_argument("real_basis: N exceeds table n_max");
  if (!point_valid(GeoPoint{lat_deg, wrap_lon(lon_deg)}))
    throw std::invalid_argument("real_basis: invalid point");
  Eigen::VectorXd out((N + 1) * (N + 1));
  const double lon = deg2rad(lon_deg);
  const double sqrt2 = std::sqrt(2.0);
  if (table) {
    for (int n = 0; n <= N; ++n) out[n] = table->eval(n, 0, lat_deg);
    int idx = N + 1;
    for (int m = 1; m <= N; ++m) {
      const double cm = std::cos(m * lon), sm = std::sin(m * lon);
      for (int n = m; n <= N; ++n) {
        const double p = sqrt2 * table->eval(n, m, lat_deg);
        out[idx++] = p * cm;
        out[idx++] = p * sm;
      }
    }
  } else {
    const LegendreTable t(N, std::sin(deg2rad(lat_deg)));
    for (int n = 0; n <= N; ++n) out[n] = t(n, 0);
    int idx = N + 1;
    for (int m = 1; m <= N; ++m) {
      const double cm = std::cos(m * lon), sm = std::sin(m * lon);
      for (int n = m; n <= N; ++n) {
        const double p = sqrt2 * t(n, m);
        out[idx++] = p * cm;
        out[idx++] = p * sm;
      }
    }
  }
  return out;
}

/// Index of the (n, m, cos|sin) entry within the real_basis ordering.
inline int real_basis_index(int N, int n, int m, bool sine) {
  if (m == 0) return n;
  int idx = N + 1;
  for (int mm = 1; mm < m; ++mm) idx += 2 * (N - mm + 1);
  return idx + 2 * (n - m) + (sine ? 1 : 0);
}

/// s×(N+1)² matrix whose rows are real_basis at each point.
inline Eigen::MatrixXd basis_matrix(int N, std::span<const GeoPoint> pts,
                                    const SplineTable* table = nullptr) {
  Eigen::MatrixXd B(pts.size(), (N + 1) * (N + 1));
  for (size_t i = 0; i < pts.size(); ++i)
    B.row(i) = real_basis(N, pts[i].lat, pts[i].lon, table).transpose();
  return B;
}

inline Eigen::MatrixXd basis_matrix(int N, std::span<const Observation> obs,
                                    const SplineTable* table = nullptr) {
  Eigen::MatrixXd B(obs.size(), (N + 1) * (N + 1));
  for (size_t i = 0; i < obs.size(); ++i)
    B.row(i) =
        real_basis(N, obs[i].point.lat, obs[i].point.lon, table).transpose();
  return B;
}

inline constexpr int kMeanDesignCols = 78;

/// Regression covariates for the mean surface: unnormalized
/// P_n^m(sin L)·cos(m·l) and ·sin(m·l) for n = 0..12, m = 0..min(3, n),
/// sine terms only for m >= 1. Ordering: n-major, m ascending, cosine
/// before sine. The literal enumeration has 79 terms; the final one, the
/// (n, m) = (12, 3) sine regressor, is dropped to make exactly 78 columns.
inline Eigen::VectorXd mean_design_row(double lat_deg, double lon_deg) {
  if (!point_valid(GeoPoint{lat_deg, wrap_lon(lon_deg)}))
    throw std::invalid_argument("mean_design_row: invalid point");
  Eigen::VectorXd out(kMeanDesignCols);
  const double x = std::sin(deg2rad(lat_deg));
  const double lon = deg2rad(lon_deg);
  int idx = 0;
  for (int n = 0; n <= 12; ++n) {
    for (int m = 0; m <= std::min(3, n); ++m) {
      const double p = legendre_assoc(n, m, x);
      if (m == 0) {
        out[idx++] = p;
      } else {
        out[idx++] = p * std::cos(m * lon);
        if (idx == kMeanDesignCols) return out;  // (12,3) sine dropped
        out[idx++] = p * std::sin(m * lon);
      }
    }
  }
  return out;
}

/// Covariate labels in mean_design_row order, for serialized coefficients.
struct MeanTermIndex {
  int n;
  int m;
  bool sine;
};

inline std::vector<MeanTermIndex> mean_design_terms() {
  std::vector<MeanTermIndex> terms;
  for (int n = 0; n <= 12; ++n) {
    for (int m = 0; m <= std::min(3, n); ++m) {
      terms.push_back({n, m, false});
      if (static_cast<int>(terms.size()) == kMeanDesignCols) return terms;
      if (m >= 1) {
        terms.push_back({n, m, true});
        if (static_cast<int>(terms.size()) == kMeanDesignCols) return terms;
      }
    }
  }
  return terms;
}

inline Eigen::MatrixXd mean_design_matrix(std::span<const Observation> obs) {
  Eigen::MatrixXd X(obs.size(), kMeanDesignCols);
  for (size_t i = 0; i < obs.size(); ++i)
    X.row(i) = mean_design_row(obs[i].point.lat, obs[i].point.lon).transpose();
  return X;
}

}  // namespace axsym
