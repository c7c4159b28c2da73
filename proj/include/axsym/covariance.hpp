#pragma once

#include <cmath>
#include <complex>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "axsym/geo.hpp"
#include "axsym/harmonics.hpp"

namespace axsym {

/// Truncated axially symmetric covariance model. The coefficient covariance
/// block for longitudinal wavenumber m is C_m = factors[m] · factors[m]*,
/// with factors[m] lower triangular of dimension (N−m+1), real for m = 0 and
/// real-diagonal complex for m >= 1. Diagonal signs are unconstrained in
/// storage; see canonicalize_signs. The nugget is white measurement
/// variance, kept out of the continuous covariance.
struct HarmonicCovariance {
  int N = 0;
  std::vector<Eigen::MatrixXcd> factors;
  double nugget = 0.0;
};

struct ExpChordalModel {
  double theta1 = 0.0;  // variance of the continuous part
  double theta2 = 1.0;  // range, in unit-sphere chord units
  double nugget = 0.0;
};

inline void validate(const HarmonicCovariance& model) {
  if (model.N < 0) throw std::invalid_argument("model: N < 0");
  if (static_cast<int>(model.factors.size()) != model.N + 1)
    throw std::invalid_argument("model: expected N+1 factor blocks");
  if (!(model.nugget >= 0.0))
    throw std::invalid_argument("model: nugget must be >= 0");
  for (int m = 0; m <= model.N; ++m) {
    const auto& A = model.factors[m];
    const int d = model.N - m + 1;
    if (A.rows() != d || A.cols() != d)
      throw std::invalid_argument("model: factor " + std::to_string(m) +
                                  " has wrong dimension");
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        if (!std::isfinite(A(i, j).real()) || !std::isfinite(A(i, j).imag()))
          throw std::invalid_argument("model: non-finite factor entry");
        if (j > i && A(i, j) != std::complex<double>(0.0, 0.0))
          throw std::invalid_argument("model: factor " + std::to_string(m) +
                                      " is not lower triangular");
        if ((m == 0 || i == j) && A(i, j).imag() != 0.0)
          throw std::invalid_argument(
              "model: diagonal and m=0 factor entries must be real");
      }
  }
}

inline void validate(const ExpChordalModel& model) {
  if (!(model.theta1 >= 0.0) || !std::isfinite(model.theta1))
    throw std::invalid_argument("exp model: theta1 must be >= 0");
  if (!(model.theta2 > 0.0) || !std::isfinite(model.theta2))
    throw std::invalid_argument("exp model: theta2 must be > 0");
  if (!(model.nugget >= 0.0) || !std::isfinite(model.nugget))
    throw std::invalid_argument("exp model: nugget must be >= 0");
}

/// Free real parameters of the truncation: lower triangles of all blocks
/// (complex off-diagonal for m >= 1) plus the nugget.
inline long long param_count(int N) {
  if (N < 0) throw std::invalid_argument("param_count: N < 0");
  const long long n = N;
  return (n + 1) * (n * n + 2 * n + 3) / 3 + 1;
}

inline std::vector<Eigen::MatrixXcd> assemble_blocks(
    const HarmonicCovariance& model) {
  validate(model);
  std::vector<Eigen::MatrixXcd> blocks;
  blocks.reserve(model.factors.size());
  for (const auto& A : model.factors) blocks.push_back(A * A.adjoint());
  return blocks;
}

/// Flips factor columns so diagonal entries are >= 0. Leaves the assembled
/// blocks (and therefore every covariance) unchanged; columns with zero
/// diagonal are untouched.
inline HarmonicCovariance canonicalize_signs(HarmonicCovariance model) {
  for (auto& A : model.factors)
    for (int j = 0; j < A.cols(); ++j)
      if (A(j, j).real() < 0.0) A.col(j) = -A.col(j);
  return model;
}

/// Evaluates the truncated covariance series from assembled blocks. Holding
/// the blocks (rather than factors) lets the same evaluator serve models
/// produced by the unconstrained linear fit, whose blocks may be indefinite.
class CovarianceEvaluator {
 public:
  explicit CovarianceEvaluator(const HarmonicCovariance& model)
      : N_(model.N), nugget_(model.nugget), blocks_(assemble_blocks(model)) {}

  CovarianceEvaluator(int N, std::vector<Eigen::MatrixXcd> blocks,
                      double nugget)
      : N_(N), nugget_(nugget), blocks_(std::move(blocks)) {
    if (static_cast<int>(blocks_.size()) != N + 1)
      throw std::invalid_argument("evaluator: expected N+1 blocks");
  }

  /// Continuous-part covariance between (L, l) and (L2, l2) with
  /// dl = l − l2, in degrees. Never includes the nugget.
  double covariance(double lat1, double lat2, double dlon) const {
    const LegendreTable t1(N_, std::sin(deg2rad(lat1)));
    const LegendreTable t2(N_, std::sin(deg2rad(lat2)));
    return covariance(t1, t2, dlon);
  }

  double covariance(const LegendreTable& t1, const LegendreTable& t2,
                    double dlon) const {
    const double dl = deg2rad(dlon);
    double acc = 0.0;
    for (int n = 0; n <= N_; ++n)
      for (int n2 = 0; n2 <= N_; ++n2)
        acc += t1(n, 0) * blocks_[0](n, n2).real() * t2(n2, 0);
    for (int m = 1; m <= N_; ++m) {
      std::complex<double> z(0.0, 0.0);
      for (int n = m; n <= N_; ++n)
        for (int n2 = m; n2 <= N_; ++n2)
          z += t1(n, m) * blocks_[m](n - m, n2 - m) * t2(n2, m);
      acc += 2.0 * (std::cos(m * dl) * z.real() - std::sin(m * dl) * z.imag());
    }
    return acc;
  }

  /// Semivariance ½·var{Z − Z′}; the nugget enters whenever the two
  /// arguments are not the same point (bitwise).
  double semivariance(double lat1, double lat2, double dlon) const {
    const double base = 0.5 * (covariance(lat1, lat1, 0.0) +
                               covariance(lat2, lat2, 0.0)) -
                        covariance(lat1, lat2, dlon);
    const bool same = (lat1 == lat2) && (dlon == 0.0);
    return same ? base : base + nugget_;
  }

  int truncation() const { return N_; }
  double nugget() const { return nugget_; }
  const std::vector<Eigen::MatrixXcd>& blocks() const { return blocks_; }

 private:
  int N_;
  double nugget_;
  std::vector<Eigen::MatrixXcd> blocks_;
};

inline double covariance(const HarmonicCovariance& model, double lat1,
                         double lat2, double dlon) {
  return CovarianceEvaluator(model).covariance(lat1, lat2, dlon);
}

inline double semivariance(const HarmonicCovariance& model, double lat1,
                           double lat2, double dlon) {
  return CovarianceEvaluator(model).semivariance(lat1, lat2, dlon);
}

/// True when K(L, L', l) = K(L, L', −l) within tol over the test grid
/// documented here: L, L' = −80(10)80 and l = 5(5)175. Real blocks make
/// this an identity; complex parts show up as sin(m·l) asymmetries, which a
/// 5-degree grid cannot miss for m <= N.
inline bool is_longitudinally_reversible(const HarmonicCovariance& model,
                                         double tol) {
  const CovarianceEvaluator ev(model);
  for (double lat1 = -80.0; lat1 <= 80.0; lat1 += 10.0) {
    const LegendreTable t1(model.N, std::sin(deg2rad(lat1)));
    for (double lat2 = -80.0; lat2 <= 80.0; lat2 += 10.0) {
      const LegendreTable t2(model.N, std::sin(deg2rad(lat2)));
      for (double dl = 5.0; dl <= 175.0; dl += 5.0)
        if (std::abs(ev.covariance(t1, t2, dl) - ev.covariance(t1, t2, -dl)) >
            tol)
          return false;
    }
  }
  return true;
}

/// V[m][j−m]: one-step-ahead prediction variance of coefficient Y_{jm} given
/// Y_{mm}..Y_{j−1,m}; equal to the squared diagonal factor entry.
inline std::vector<Eigen::VectorXd> conditional_variances(
    const HarmonicCovariance& model) {
  validate(model);
  std::vector<Eigen::VectorXd> out;
  out.reserve(model.factors.size());
  for (const auto& A : model.factors) {
    Eigen::VectorXd v(A.rows());
    for (int i = 0; i < A.rows(); ++i) v[i] = std::norm(A(i, i));
    out.push_back(std::move(v));
  }
  return out;
}

/// Exponential-in-chord comparison model; includes the nugget only at
/// exactly zero separation.
inline double exp_chordal_cov(const ExpChordalModel& model, double d) {
  if (!(d >= 0.0)) throw std::invalid_argument("exp_chordal_cov: d < 0");
  const double cont = model.theta1 * std::exp(-d / model.theta2);
  return d == 0.0 ? cont + model.nugget : cont;
}

/// Covariance of the real coefficient vector carried by real_basis, laid out
/// in the same order. For m >= 1 the cosine/sine pair of coefficient n sits
/// interleaved, and each complex block entry z = c_m(n, n') maps to the 2×2
/// real block [[Re z, Im z], [−Im z, Re z]]. With the √2 scaling inside
/// real_basis this embedding is exact: basis·Σ·basisᵀ reproduces the
/// continuous covariance between the two points.
inline Eigen::MatrixXd real_coeff_covariance(
    int N, const std::vector<Eigen::MatrixXcd>& blocks) {
  const int r = (N + 1) * (N + 1);
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(r, r);
  for (int n = 0; n <= N; ++n)
    for (int n2 = 0; n2 <= N; ++n2) S(n, n2) = blocks[0](n, n2).real();
  for (int m = 1; m <= N; ++m) {
    const int off = real_basis_index(N, m, m, false);
    for (int n = m; n <= N; ++n)
      for (int n2 = m; n2 <= N; ++n2) {
        const std::complex<double> z = blocks[m](n - m, n2 - m);
        const int r0 = off + 2 * (n - m), c0 = off + 2 * (n2 - m);
        S(r0, c0) = z.real();
        S(r0, c0 + 1) = z.imag();
        S(r0 + 1, c0) = -z.imag();
        S(r0 + 1, c0 + 1) = z.real();
      }
  }
  return S;
}

inline Eigen::MatrixXd real_coeff_covariance(const HarmonicCovariance& model) {
  return real_coeff_covariance(model.N, assemble_blocks(model));
}

/// Real square-root factor T of the coefficient covariance: T·Tᵀ =
/// real_coeff_covariance(model). Applies the same 2×2 embedding to the
/// factors; entrywise the embedding is a ring homomorphism that sends
/// conjugation to transposition, so the factorization survives it.
inline Eigen::MatrixXd real_coeff_factor(const HarmonicCovariance& model) {
  validate(model);
  const int N = model.N;
  const int r = (N + 1) * (N + 1);
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(r, r);
  for (int n = 0; n <= N; ++n)
    for (int n2 = 0; n2 <= N; ++n2)
      T(n, n2) = model.factors[0](n, n2).real();
  for (int m = 1; m <= N; ++m) {
    const int off = real_basis_index(N, m, m, false);
    for (int n = m; n <= N; ++n)
      for (int n2 = m; n2 <= N; ++n2) {
        const std::complex<double> z = model.factors[m](n - m, n2 - m);
        const int r0 = off + 2 * (n - m), c0 = off + 2 * (n2 - m);
        T(r0, c0) = z.real();
        T(r0, c0 + 1) = z.imag();
        T(r0 + 1, c0) = -z.imag();
        T(r0 + 1, c0 + 1) = z.real();
      }
  }
  return T;
}

/// Dense observation covariance: continuous part for every pair, nugget on
/// the diagonal only. Replicated coordinates are genuine replicates with
/// independent nugget draws, so off-diagonal entries never carry nugget.
inline Eigen::MatrixXd covariance_matrix(const HarmonicCovariance& model,
                                         std::span<const GeoPoint> pts) {
  const CovarianceEvaluator ev(model);
  const size_t s = pts.size();
  std::vector<LegendreTable> tables;
  tables.reserve(s);
  for (const auto& p : pts)
    tables.emplace_back(model.N, std::sin(deg2rad(p.lat)));
  Eigen::MatrixXd C(s, s);
  for (size_t i = 0; i < s; ++i) {
    for (size_t j = 0; j <= i; ++j) {
      const double k =
          ev.covariance(tables[i], tables[j], pts[i].lon - pts[j].lon);
      C(i, j) = k;
      C(j, i) = k;
    }
    C(i, i) += model.nugget;
  }
  return C;
}

inline Eigen::MatrixXd covariance_matrix(const ExpChordalModel& model,
                                         std::span<const GeoPoint> pts) {
  validate(model);
  const size_t s = pts.size();
  Eigen::MatrixXd C(s, s);
  for (size_t i = 0; i < s; ++i) {
    C(i, i) = model.theta1 + model.nugget;
    for (size_t j = 0; j < i; ++j) {
      const double k = model.theta1 *
                       std::exp(-chordal_distance(pts[i], pts[j]) / model.theta2);
      C(i, j) = k;
      C(j, i) = k;
    }
  }
  return C;
}

// ---------------------------------------------------------------------------
// Model files: structured text, one assignment per line. Harmonic models
// list lower-triangular factor entries as `A <m> <row> <col> <re> <im>`
// (1-based row/col); omitted entries are zero. 17 significant digits keep
// the round trip bit-faithful for finite doubles.

inline void write_model(std::ostream& out, const HarmonicCovariance& model) {
  validate(model);
  std::string buf;
  out << "axsym-model harmonic\n";
  out << "N " << model.N << "\n";
  buf = "nugget ";
  detail::format_double(buf, model.nugget);
  buf += '\n';
  out << buf;
  for (int m = 0; m <= model.N; ++m) {
    const auto& A = model.factors[m];
    for (int i = 0; i < A.rows(); ++i)
      for (int j = 0; j <= i; ++j) {
        buf = "A ";
        buf += std::to_string(m);
        buf += ' ';
        buf += std::to_string(i + 1);
        buf += ' ';
        buf += std::to_string(j + 1);
        buf += ' ';
        detail::format_double(buf, A(i, j).real());
        buf += ' ';
        detail::format_double(buf, A(i, j).imag());
        buf += '\n';
        out << buf;
      }
  }
}

inline void write_model(std::ostream& out, const ExpChordalModel& model) {
  validate(model);
  std::string buf = "axsym-model exp-chordal\n";
  buf += "theta1 ";
  detail::format_double(buf, model.theta1);
  buf += "\ntheta2 ";
  detail::format_double(buf, model.theta2);
  buf += "\nnugget ";
  detail::format_double(buf, model.nugget);
  buf += '\n';
  out << buf;
}

using CovarianceModel = std::variant<HarmonicCovariance, ExpChordalModel>;

inline CovarianceModel read_model(std::istream& in) {
  std::string line;
  int line_no = 0;
  auto next_fields = [&](std::vector<std::string_view>& f,
                         std::string& store) -> bool {
    while (std::getline(in, store)) {
      ++line_no;
      f = detail::split_fields(store);
      if (!f.empty() && f[0][0] != '#') return true;
    }
    return false;
  };
  std::vector<std::string_view> f;
  if (!next_fields(f, line) || f.size() != 2 || f[0] != "axsym-model")
    throw std::runtime_error("model file: missing 'axsym-model <type>' header");
  const std::string type(f[1]);
  if (type == "exp-chordal") {
    ExpChordalModel model;
    bool t1 = false, t2 = false, ng = false;
    while (next_fields(f, line)) {
      if (f.size() != 2)
        throw std::runtime_error("model file line " + std::to_string(line_no) +
                                 ": expected '<field> <value>'");
      const double v = detail::parse_double(f[1], line_no, "value");
      if (f[0] == "theta1") model.theta1 = v, t1 = true;
      else if (f[0] == "theta2") model.theta2 = v, t2 = true;
      else if (f[0] == "nugget") model.nugget = v, ng = true;
      else
        throw std::runtime_error("model file line " + std::to_string(line_no) +
                                 ": unknown field '" + std::string(f[0]) + "'");
    }
    if (!t1 || !t2 || !ng)
      throw std::runtime_error("model file: exp-chordal needs theta1, theta2, nugget");
    validate(model);
    return model;
  }
  if (type != "harmonic")
    throw std::runtime_error("model file: unknown type '" + type + "'");
  HarmonicCovariance model;
  bool have_n = false, have_nugget = false;
  while (next_fields(f, line)) {
    if (f[0] == "N") {
      if (f.size() != 2)
        throw std::runtime_error("model file line " + std::to_string(line_no) +
                                 ": expected 'N <value>'");
      model.N = static_cast<int>(detail::parse_int(f[1], line_no, "N"));
      if (model.N < 0)
        throw std::runtime_error("model file: N must be >= 0");
      model.factors.clear();
      for (int m = 0; m <= model.N; ++m)
        model.factors.push_back(
            Eigen::MatrixXcd::Zero(model.N - m + 1, model.N - m + 1));
      have_n = true;
    } else if (f[0] == "nugget") {
      if (f.size() != 2)
        throw std::runtime_error("model file line " + std::to_string(line_no) +
                                 ": expected 'nugget <value>'");
      model.nugget = detail::parse_double(f[1], line_no, "nugget");
      have_nugget = true;
    } else if (f[0] == "A") {
      if (!have_n)
        throw std::runtime_error("model file line " + std::to_string(line_no) +
                                 ": A entry before N");
      if (f.size() != 6)
        throw std::runtime_error("model file line " + std::to_string(line_no) +
                                 ": expected 'A <m> <row> <col> <re> <im>'");
      const int m = static_cast<int>(detail::parse_int(f[1], line_no, "m"));
      const int i = static_cast<int>(detail::parse_int(f[2], line_no, "row"));
      const int j = static_cast<int>(detail::parse_int(f[3], line_no, "col"));
      const double re = detail::parse_double(f[4], line_no, "re");
      const double im = detail::parse_double(f[5], line_no, "im");
      const int d = model.N - m + 1;
      if (m < 0 || m > model.N || i < 1 || i > d || j < 1 || j > i)
        throw std::runtime_error("model file line " + std::to_string(line_no) +
                                 ": entry outside the lower triangle of A_" +
                                 std::to_string(m));
      if ((m == 0 || i == j) && im != 0.0)
        throw std::runtime_error("model file line " + std::to_string(line_no) +
                                 ": this entry must be real");
      model.factors[m](i - 1, j - 1) = std::complex<double>(re, im);
    } else {
      throw std::runtime_error("model file line " + std::to_string(line_no) +
                               ": unknown field '" + std::string(f[0]) + "'");
    }
  }
  if (!have_n || !have_nugget)
    throw std::runtime_error("model file: harmonic needs N and nugget");
  validate(model);
  return model;
}

inline HarmonicCovariance read_harmonic_model(std::istream& in) {
  auto m = read_model(in);
  if (!std::holds_alternative<HarmonicCovariance>(m))
    throw std::runtime_error("expected a harmonic model file");
  return std::get<HarmonicCovariance>(m);
}

inline ExpChordalModel read_exp_model(std::istream& in) {
  auto m = read_model(in);
  if (!std::holds_alternative<ExpChordalModel>(m))
    throw std::runtime_error("expected an exp-chordal model file");
  return std::get<ExpChordalModel>(m);
}

}  // namespace axsym
