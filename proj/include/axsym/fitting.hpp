#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "axsym/covariance.hpp"
#include "axsym/geo.hpp"
#include "axsym/harmonics.hpp"
#include "axsym/optim.hpp"
#include "axsym/variogram.hpp"

namespace axsym {

// ---------------------------------------------------------------------------
// Parameter packing. One real vector covers the lower triangles of all
// blocks, ordered m = 0..N, within a block column-major, rows top to
// bottom: the m = 0 block packs one real per entry; m >= 1 blocks pack one
// real on the diagonal and (Re, Im) below it. The final element is the
// scale parameter (nugget, or a transform of it chosen by the caller).
// The same layout serves Hermitian blocks C_m (lower triangle determines
// them) and triangular factors A_m, and its length is param_count(N).
// ---------------------------------------------------------------------------

inline Eigen::VectorXd pack_lower_blocks(
    std::span<const Eigen::MatrixXcd> blocks, int N, double last) {
  if (static_cast<int>(blocks.size()) != N + 1)
    throw std::invalid_argument("pack_lower_blocks: expected N+1 blocks");
  Eigen::VectorXd out(param_count(N));
  Eigen::Index idx = 0;
  for (int m = 0; m <= N; ++m) {
    const int d = N + 1 - m;
    if (blocks[m].rows() != d || blocks[m].cols() != d)
      throw std::invalid_argument("pack_lower_blocks: block size mismatch");
    for (int j = 0; j < d; ++j)
      for (int i = j; i < d; ++i) {
        if (m == 0) {
          out[idx++] = blocks[m](i, j).real();
        } else if (i == j) {
          out[idx++] = blocks[m](i, j).real();
        } else {
          out[idx++] = blocks[m](i, j).real();
          out[idx++] = blocks[m](i, j).imag();
        }
      }
  }
  out[idx++] = last;
  return out;
}

/// Inverse of pack_lower_blocks. Produces lower-triangular blocks (upper
/// entries zero); *last receives the trailing element.
inline std::vector<Eigen::MatrixXcd> unpack_lower_blocks(
    const Eigen::VectorXd& params, int N, double* last) {
  if (params.size() != param_count(N))
    throw std::invalid_argument("unpack_lower_blocks: bad length");
  std::vector<Eigen::MatrixXcd> blocks;
  blocks.reserve(N + 1);
  Eigen::Index idx = 0;
  for (int m = 0; m <= N; ++m) {
    const int d = N + 1 - m;
    Eigen::MatrixXcd b = Eigen::MatrixXcd::Zero(d, d);
    for (int j = 0; j < d; ++j)
      for (int i = j; i < d; ++i) {
        if (m == 0 || i == j) {
          b(i, j) = params[idx++];
        } else {
          const double re = params[idx++];
          const double im = params[idx++];
          b(i, j) = std::complex<double>(re, im);
        }
      }
    blocks.push_back(std::move(b));
  }
  if (last) *last = params[idx];
  return blocks;
}

/// Mirrors a lower triangle into a full Hermitian matrix.
inline Eigen::MatrixXcd hermitian_from_lower(const Eigen::MatrixXcd& lower) {
  Eigen::MatrixXcd full = lower;
  for (Eigen::Index j = 0; j < full.cols(); ++j) {
    full(j, j) = full(j, j).real();
    for (Eigen::Index i = j + 1; i < full.rows(); ++i)
      full(j, i) = std::conj(full(i, j));
  }
  return full;
}

/// Packed indices of the identifiability mask: the first column of the
/// m = 0 block, i.e. the variance of the degree-0 coefficient and its
/// covariances with every other order-0 coefficient. N+1 entries, and they
/// are the first N+1 packed parameters by construction of the layout.
inline std::vector<int> mask_first_column_indices(int N) {
  std::vector<int> idx(N + 1);
  for (int i = 0; i <= N; ++i) idx[i] = i;
  return idx;
}

// ---------------------------------------------------------------------------
// Weighted least squares against binned variograms.
// ---------------------------------------------------------------------------

/// Weight rule: pair count divided by (1° + the central angle between the
/// nominal bin centers). The first center is (L0 + ½, 0); the second is
/// (L0 + ½ − (j + ½), k + ½).
inline std::vector<double> wls_weights(std::span<const VariogramRecord> recs) {
  std::vector<double> w;
  w.reserve(recs.size());
  for (const auto& r : recs) {
    const GeoPoint c1 = make_point(r.L0 + 0.5, 0.0);
    const GeoPoint c2 =
        make_point(r.L0 + 0.5 - (r.j + 0.5), wrap_lon(r.k + 0.5));
    const double angle_deg = rad2deg(central_angle(c1, c2));
    w.push_back(double(r.count) / (angle_deg + 1.0));
  }
  return w;
}

struct WlsProblem {
  int N = 0;
  std::vector<VariogramRecord> records;
  std::vector<double> weights;
};

inline WlsProblem make_wls_problem(std::vector<VariogramRecord> records,
                                   int N) {
  if (N < 0) throw std::invalid_argument("make_wls_problem: N must be >= 0");
  if (records.empty())
    throw std::invalid_argument("make_wls_problem: no records");
  WlsProblem p;
  p.N = N;
  p.weights = wls_weights(records);
  p.records = std::move(records);
  return p;
}

namespace detail {

/// Model-side evaluation points of a record: the variogram is compared at
/// latitudes (L0 + ½, L0 + ½ + mean_dlat) and longitude lag mean_dlon.
struct RecordArgs {
  double lat1, lat2, dlon;
  bool same_point;  // the coincident-point rule drops the nugget term
};

inline RecordArgs record_args(const VariogramRecord& r) {
  RecordArgs a;
  a.lat1 = r.L0 + 0.5;
  a.lat2 = a.lat1 + r.mean_dlat;
  a.dlon = r.mean_dlon;
  a.same_point = (a.lat1 == a.lat2) && (a.dlon == 0.0);
  return a;
}

/// Rows of the variogram design matrix: gamma is linear in the packed
/// block entries, with the trailing column multiplying the nugget.
inline Eigen::MatrixXd gamma_design(const WlsProblem& p) {
  const int N = p.N;
  const auto cols = param_count(N);
  Eigen::MatrixXd X(p.records.size(), cols);
  for (size_t ri = 0; ri < p.records.size(); ++ri) {
    const auto a = record_args(p.records[ri]);
    const LegendreTable t1(N, std::sin(deg2rad(a.lat1)));
    const LegendreTable t2(N, std::sin(deg2rad(a.lat2)));
    const double ml = deg2rad(a.dlon);
    Eigen::Index idx = 0;
    auto row = X.row(static_cast<Eigen::Index>(ri));
    for (int m = 0; m <= N; ++m) {
      const double c = std::cos(m * ml);
      const double s = std::sin(m * ml);
      for (int j = m; j <= N; ++j)
        for (int i = j; i <= N; ++i) {
          const double u1i = t1(i, m), u1j = t1(j, m);
          const double u2i = t2(i, m), u2j = t2(j, m);
          if (m == 0) {
            row[idx++] = (i == j) ? 0.5 * (u1i - u2i) * (u1i - u2i)
                                  : (u1i - u2i) * (u1j - u2j);
          } else if (i == j) {
            row[idx++] = u1i * u1i + u2i * u2i - 2.0 * c * u1i * u2i;
          } else {
            row[idx++] = 2.0 * (u1i * u1j + u2i * u2j -
                                c * (u2i * u1j + u1i * u2j));
            row[idx++] = 2.0 * s * (u1i * u2j - u2i * u1j);
          }
        }
    }
    row[idx] = a.same_point ? 0.0 : 1.0;
  }
  return X;
}

}  // namespace detail

/// Weighted squared misfit between binned estimates and the model
/// variogram evaluated at each record's mean offsets.
inline double wls_criterion(const HarmonicCovariance& model,
                            const WlsProblem& problem) {
  if (model.N != problem.N)
    throw std::invalid_argument("wls_criterion: truncation mismatch");
  const CovarianceEvaluator ev(model);
  CompensatedSum acc;
  for (size_t i = 0; i < problem.records.size(); ++i) {
    const auto a = detail::record_args(problem.records[i]);
    const double g = ev.semivariance(a.lat1, a.lat2, a.dlon);
    const double r = problem.records[i].gamma_hat - g;
    acc.add(problem.weights[i] * r * r);
  }
  return acc.value();
}

struct WlsLinearFit {
  int N = 0;
  std::vector<Eigen::MatrixXcd> blocks;  // Hermitian, possibly indefinite
  double nugget = 0.0;                   // unconstrained estimate
  std::vector<double> min_eigenvalues;   // most negative eigenvalue per block
  bool rank_deficient = false;
  Eigen::Index rank = 0;
  double criterion = 0.0;
};

/// Closed-form minimizer over unconstrained Hermitian blocks and nugget,
/// with the masked parameters excluded (left at zero). Rank deficiency
/// yields the minimum-norm solution and a flag.
inline WlsLinearFit wls_fit_linear(const WlsProblem& problem) {
  const int N = problem.N;
  const auto full_cols = param_count(N);
  const auto mask = mask_first_column_indices(N);
  const Eigen::MatrixXd X = detail::gamma_design(problem);

  std::vector<Eigen::Index> keep;
  keep.reserve(full_cols - mask.size());
  for (Eigen::Index c = 0; c < full_cols; ++c)
    if (c > mask.back()) keep.push_back(c);  // mask occupies the front
  Eigen::MatrixXd Xw(X.rows(), static_cast<Eigen::Index>(keep.size()));
  Eigen::VectorXd yw(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double sw = std::sqrt(problem.weights[size_t(r)]);
    for (size_t c = 0; c < keep.size(); ++c)
      Xw(r, static_cast<Eigen::Index>(c)) = sw * X(r, keep[c]);
    yw[r] = sw * problem.records[size_t(r)].gamma_hat;
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Xw);
  const Eigen::VectorXd theta_free = cod.solve(yw);

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(full_cols);
  for (size_t c = 0; c < keep.size(); ++c)
    theta[keep[c]] = theta_free[static_cast<Eigen::Index>(c)];

  WlsLinearFit fit;
  fit.N = N;
  fit.rank = cod.rank();
  fit.rank_deficient = cod.rank() < static_cast<Eigen::Index>(keep.size());
  auto lower = unpack_lower_blocks(theta, N, &fit.nugget);
  fit.blocks.reserve(lower.size());
  for (auto& b : lower) fit.blocks.push_back(hermitian_from_lower(b));
  for (const auto& b : fit.blocks) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(b);
    fit.min_eigenvalues.push_back(es.eigenvalues().minCoeff());
  }
  CompensatedSum acc;
  const Eigen::VectorXd gamma = X * theta;
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double res = problem.records[size_t(r)].gamma_hat - gamma[r];
    acc.add(problem.weights[size_t(r)] * res * res);
  }
  fit.criterion = acc.value();
  return fit;
}

/// PSD projection of a linear fit: eigenvalues clipped at zero, then a
/// triangular square root. The masked first row and column of the m = 0
/// block stay bitwise zero by factoring its trailing minor.
inline HarmonicCovariance psd_init_from_linear(const WlsLinearFit& lin) {
  HarmonicCovariance init;
  init.N = lin.N;
  init.nugget = std::max(0.0, lin.nugget);
  // triangularize a clipped square root: F* = QR gives L = R* with
  // L L* = F F*, then column phases make the diagonal real
  auto lower_root = [](const Eigen::MatrixXcd& herm) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(herm);
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    const Eigen::MatrixXcd F =
        es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
    Eigen::HouseholderQR<Eigen::MatrixXcd> qr(F.adjoint());
    Eigen::MatrixXcd R =
        qr.matrixQR().triangularView<Eigen::Upper>();
    Eigen::MatrixXcd L = R.adjoint();
    for (Eigen::Index j = 0; j < L.cols(); ++j) {
      const std::complex<double> d = L(j, j);
      if (std::abs(d) > 0.0) L.col(j) *= std::conj(d) / std::abs(d);
      L(j, j) = L(j, j).real();
    }
    return L;
  };
  auto lower_root_real = [](const Eigen::MatrixXd& sym) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(0.0);
    const Eigen::MatrixXd F =
        es.eigenvectors() * lam.cwiseSqrt().asDiagonal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(F.transpose());
    Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
    return Eigen::MatrixXd(R.transpose());
  };
  for (int m = 0; m <= lin.N; ++m) {
    const int d = lin.N + 1 - m;
    if (m == 0) {
      // the masked first row and column stay bitwise zero
      Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
      if (d > 1)
        A.bottomRightCorner(d - 1, d - 1) = lower_root_real(
            lin.blocks[0].bottomRightCorner(d - 1, d - 1).real());
      init.factors.push_back(A.cast<std::complex<double>>());
    } else {
      init.factors.push_back(lower_root(lin.blocks[m]));
    }
  }
  return init;
}

struct WlsPsdFit {
  HarmonicCovariance model;
  double criterion = 0.0;
  bool converged = false;
  bool warning = false;
  int iterations = 0;
  std::vector<double> trace;
  std::string message;
  std::vector<int> mask;
};

namespace detail {

/// Criterion and analytic gradient over free factor parameters (the mask
/// occupies the leading packed slots and is excluded). The trailing
/// parameter is u with nugget = u².
struct WlsPsdCore {
  int N = 0;
  Eigen::Index full = 0, free_n = 0;
  std::vector<int> mask;
  Eigen::MatrixXd X;
  Eigen::VectorXd y, w;

  static WlsPsdCore make(const WlsProblem& problem) {
    WlsPsdCore core;
    core.N = problem.N;
    core.mask = mask_first_column_indices(problem.N);
    core.full = param_count(problem.N);
    core.free_n = core.full - static_cast<Eigen::Index>(core.mask.size());
    core.X = gamma_design(problem);
    core.y.resize(core.X.rows());
    core.w.resize(core.X.rows());
    for (Eigen::Index r = 0; r < core.X.rows(); ++r) {
      core.y[r] = problem.records[size_t(r)].gamma_hat;
      core.w[r] = problem.weights[size_t(r)];
    }
    return core;
  }

  Eigen::VectorXd embed(const Eigen::VectorXd& free_x) const {
    Eigen::VectorXd fullx = Eigen::VectorXd::Zero(full);
    fullx.tail(free_n) = free_x;
    return fullx;
  }

  double eval(const Eigen::VectorXd& free_x, Eigen::VectorXd* grad) const {
    const Eigen::VectorXd fullx = embed(free_x);
    double u = 0.0;
    const auto A = unpack_lower_blocks(fullx, N, &u);
    std::vector<Eigen::MatrixXcd> C;
    C.reserve(A.size());
    for (const auto& a : A) C.push_back(a * a.adjoint());
    const Eigen::VectorXd theta_c = pack_lower_blocks(C, N, u * u);
    const Eigen::VectorXd res = y - X * theta_c;
    const double F = (w.array() * res.array() * res.array()).sum();
    if (grad) {
      // dF/d(theta_c), then through C = A A*: dF/dA = 2 D A
      const Eigen::VectorXd gc =
          -2.0 * (X.transpose() * (w.array() * res.array()).matrix());
      double g_nugget = 0.0;
      auto D_lower = unpack_lower_blocks(gc, N, &g_nugget);
      Eigen::VectorXd gfull(full);
      Eigen::Index idx = 0;
      for (int m = 0; m <= N; ++m) {
        Eigen::MatrixXcd D = D_lower[size_t(m)];
        for (Eigen::Index j = 0; j < D.cols(); ++j) {
          D(j, j) = D(j, j).real();
          for (Eigen::Index i = j + 1; i < D.rows(); ++i) {
            // a packed coefficient covers the entry and its mirror
            D(i, j) = 0.5 * D(i, j);
            D(j, i) = std::conj(D(i, j));
          }
        }
        const Eigen::MatrixXcd GA = 2.0 * D * A[size_t(m)];
        const int d = N + 1 - m;
        for (int j = 0; j < d; ++j)
          for (int i = j; i < d; ++i) {
            if (m == 0 || i == j) {
              gfull[idx++] = GA(i, j).real();
            } else {
              gfull[idx++] = GA(i, j).real();
              gfull[idx++] = GA(i, j).imag();
            }
          }
      }
      gfull[idx] = g_nugget * 2.0 * u;
      *grad = gfull.tail(free_n);
    }
    return F;
  }
};

}  // namespace detail

/// Minimizes the criterion over triangular factors (diagonals sign-free)
/// and nugget = u², with the mask frozen at zero bitwise. Returns a model
/// whose criterion never exceeds the initial one.
inline WlsPsdFit wls_fit_psd(const WlsProblem& problem,
                             const HarmonicCovariance& init,
                             const OptimOptions& opt = {}) {
  if (init.N != problem.N)
    throw std::invalid_argument("wls_fit_psd: truncation mismatch");
  validate(init);
  const int N = problem.N;
  const auto core = detail::WlsPsdCore::make(problem);

  Eigen::VectorXd x0_full =
      pack_lower_blocks(init.factors, N, std::sqrt(init.nugget));
  for (int idx : core.mask) x0_full[idx] = 0.0;

  Objective fg = [&core](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    return core.eval(x, g);
  };
  const auto res = minimize(fg, x0_full.tail(core.free_n), opt);

  WlsPsdFit fit;
  double u = 0.0;
  fit.model.factors = unpack_lower_blocks(core.embed(res.x), N, &u);
  fit.model.N = N;
  fit.model.nugget = u * u;
  fit.model = canonicalize_signs(std::move(fit.model));
  fit.criterion = res.value;
  fit.converged = res.converged;
  fit.warning = !res.converged;
  fit.iterations = res.iterations;
  fit.trace = res.trace;
  fit.message = res.message;
  fit.mask = core.mask;
  return fit;
}

inline WlsPsdFit wls_fit_psd(const WlsProblem& problem,
                             const OptimOptions& opt = {}) {
  return wls_fit_psd(problem, psd_init_from_linear(wls_fit_linear(problem)),
                     opt);
}

// ---------------------------------------------------------------------------
// Gaussian log-likelihoods (mean zero throughout).
// ---------------------------------------------------------------------------

inline double loglik_dense(const Eigen::MatrixXd& cov,
                           const Eigen::VectorXd& values) {
  if (cov.rows() != cov.cols() || cov.rows() != values.size())
    throw std::invalid_argument("loglik_dense: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("loglik_dense: covariance not positive definite");
  const double s = double(values.size());
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < cov.rows(); ++i)
    logdet += 2.0 * std::log(llt.matrixL()(i, i));
  const double quad = values.dot(llt.solve(values));
  return -0.5 * (s * std::log(2.0 * kPi) + logdet + quad);
}

/// Sufficient statistics for repeated low-rank likelihood evaluations on a
/// fixed data set: P = BᵀB, b = Bᵀz, and zᵀz, with B the real basis at the
/// observation points.
struct LowRankWorkspace {
  int N = 0;
  Eigen::Index s = 0;
  Eigen::MatrixXd P;
  Eigen::VectorXd b;
  double zz = 0.0;
};

inline LowRankWorkspace make_lowrank_workspace(
    std::span<const Observation> obs, int N) {
  if (obs.empty())
    throw std::invalid_argument("lowrank workspace: no observations");
  LowRankWorkspace ws;
  ws.N = N;
  ws.s = static_cast<Eigen::Index>(obs.size());
  const int r = (N + 1) * (N + 1);
  Eigen::MatrixXd B(ws.s, r);
  Eigen::VectorXd z(ws.s);
  CompensatedSum zz;
  for (Eigen::Index i = 0; i < ws.s; ++i) {
    B.row(i) =
        real_basis(N, obs[size_t(i)].point.lat, obs[size_t(i)].point.lon)
            .transpose();
    z[i] = obs[size_t(i)].value;
    zz.add(z[i] * z[i]);
  }
  ws.P = B.transpose() * B;
  ws.b = B.transpose() * z;
  ws.zz = zz.value();
  return ws;
}

/// Exact log-likelihood through the rank-(N+1)² identity: one inner
/// factorization of G = vI + TᵀPT replaces the s×s solve.
inline double loglik_lowrank(const HarmonicCovariance& model,
                             const LowRankWorkspace& ws) {
  if (model.N != ws.N)
    throw std::invalid_argument("loglik_lowrank: truncation mismatch");
  if (!(model.nugget > 0.0))
    throw std::invalid_argument(
        "loglik_lowrank: nugget must be positive for the low-rank identity");
  const double v = model.nugget;
  const Eigen::MatrixXd T = real_coeff_factor(model);
  const Eigen::Index r = T.rows();
  Eigen::MatrixXd G = T.transpose() * ws.P * T;
  G.diagonal().array() += v;
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("loglik_lowrank: inner factorization failed");
  double logdetG = 0.0;
  for (Eigen::Index i = 0; i < r; ++i)
    logdetG += 2.0 * std::log(llt.matrixL()(i, i));
  const Eigen::VectorXd w = T.transpose() * ws.b;
  const double quad = (ws.zz - w.dot(llt.solve(w))) / v;
  const double logdet = double(ws.s - r) * std::log(v) + logdetG;
  return -0.5 * (double(ws.s) * std::log(2.0 * kPi) + logdet + quad);
}

inline double loglik_lowrank(const HarmonicCovariance& model,
                             std::span<const Observation> obs) {
  return loglik_lowrank(model, make_lowrank_workspace(obs, model.N));
}

/// Closed-form white-noise MLE: the uncentered mean of squares.
inline double mle_white_noise(std::span<const Observation> obs) {
  if (obs.empty()) throw std::invalid_argument("mle_white_noise: empty data");
  CompensatedSum acc;
  for (const auto& o : obs) acc.add(o.value * o.value);
  return acc.value() / double(obs.size());
}

inline double white_noise_loglik(double variance, Eigen::Index s,
                                 double sum_squares) {
  return -0.5 * (double(s) * std::log(2.0 * kPi) +
                 double(s) * std::log(variance) + sum_squares / variance);
}

struct ExpFit {
  ExpChordalModel model;
  double loglik = 0.0;
  double loglik_white = 0.0;
  bool converged = false;
  bool warning = false;
  bool boundary = false;  // spatial part vanished; white-noise model returned
  int iterations = 0;
  std::vector<double> trace;
  std::string message;
};

namespace detail {

/// Negative log-likelihood of the exponential model over x = (t, log θ₂,
/// log v) with θ₁ = t², and its analytic gradient.
struct ExpMleCore {
  Eigen::MatrixXd D;
  Eigen::VectorXd z;
  double sumsq = 0.0;

  static ExpMleCore make(std::span<const Observation> obs) {
    const Eigen::Index s = static_cast<Eigen::Index>(obs.size());
    ExpMleCore core;
    core.D.resize(s, s);
    core.z.resize(s);
    CompensatedSum sq;
    for (Eigen::Index i = 0; i < s; ++i) {
      core.z[i] = obs[size_t(i)].value;
      sq.add(core.z[i] * core.z[i]);
      core.D(i, i) = 0.0;
      for (Eigen::Index j = 0; j < i; ++j) {
        const double d =
            chordal_distance(obs[size_t(i)].point, obs[size_t(j)].point);
        core.D(i, j) = d;
        core.D(j, i) = d;
      }
    }
    core.sumsq = sq.value();
    return core;
  }

  double eval(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    const Eigen::Index s = z.size();
    const double t = x[0];
    const double theta1 = t * t;
    const double theta2 = std::exp(x[1]);
    const double v = std::exp(x[2]);
    const Eigen::MatrixXd M = (-D / theta2).array().exp().matrix();
    Eigen::MatrixXd C = theta1 * M;
    C.diagonal().array() += v;
    Eigen::LLT<Eigen::MatrixXd> llt(C);
    if (llt.info() != Eigen::Success) {
      if (grad) grad->setZero(3);
      return std::numeric_limits<double>::infinity();
    }
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < s; ++i)
      logdet += 2.0 * std::log(llt.matrixL()(i, i));
    const Eigen::VectorXd alpha = llt.solve(z);
    const double L = -0.5 * (double(s) * std::log(2.0 * kPi) + logdet +
                             z.dot(alpha));
    if (grad) {
      const Eigen::MatrixXd Cinv =
          llt.solve(Eigen::MatrixXd::Identity(s, s));
      const Eigen::MatrixXd dC2 =
          (theta1 / (theta2 * theta2)) * M.cwiseProduct(D);
      auto dL = [&](const Eigen::MatrixXd& dC) {
        return 0.5 * alpha.dot(dC * alpha) -
               0.5 * Cinv.cwiseProduct(dC).sum();
      };
      grad->resize(3);
      (*grad)[0] = -dL(M) * 2.0 * t;
      (*grad)[1] = -dL(dC2) * theta2;
      (*grad)[2] = -(0.5 * alpha.squaredNorm() - 0.5 * Cinv.trace()) * v;
    }
    return -L;
  }

  double median_base_distance() const {
    std::vector<double> d;
    d.reserve(size_t(z.size()));
    for (Eigen::Index i = 1; i < z.size(); ++i) d.push_back(D(i, 0));
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    return std::max(1e-3, d[d.size() / 2]);
  }
};

}  // namespace detail

/// Dense MLE of the exponential-in-chordal-distance model with nugget.
/// Parameters run unconstrained as (t, log θ₂, log v) with θ₁ = t², so the
/// white-noise boundary t = 0 is reachable and the returned likelihood is
/// never below the white-noise maximum.
inline ExpFit mle_exp_nugget(std::span<const Observation> obs,
                             const OptimOptions& opt = {}) {
  const Eigen::Index s = static_cast<Eigen::Index>(obs.size());
  if (s < 2) throw std::invalid_argument("mle_exp_nugget: need >= 2 points");
  const auto core = detail::ExpMleCore::make(obs);
  const double sumsq = core.sumsq;
  const double vhat = sumsq / double(s);
  const double lw = white_noise_loglik(vhat, s, sumsq);

  Objective fg = [&core](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    return core.eval(x, g);
  };

  // variance split between the spatial part and nugget, with a range
  // multi-start: a single long-range start can stall in a smooth local
  // maximum when the true range is short
  const double med = core.median_base_distance();
  OptimResult res;
  res.value = std::numeric_limits<double>::infinity();
  for (const double range0 : {med, med / 4.0, med / 16.0}) {
    Eigen::VectorXd x0(3);
    x0 << std::sqrt(0.5 * vhat), std::log(range0), std::log(0.5 * vhat);
    auto r = minimize(fg, x0, opt);
    if (r.value < res.value) res = std::move(r);
  }

  ExpFit fit;
  fit.loglik_white = lw;
  fit.iterations = res.iterations;
  fit.trace = res.trace;
  fit.message = res.message;
  fit.converged = res.converged;
  fit.warning = !res.converged;
  const double best = -res.value;
  if (best >= lw) {
    fit.model.theta1 = res.x[0] * res.x[0];
    fit.model.theta2 = std::exp(res.x[1]);
    fit.model.nugget = std::exp(res.x[2]);
    fit.loglik = best;
  } else {
    fit.model.theta1 = 0.0;
    fit.model.theta2 = med;
    fit.model.nugget = vhat;
    fit.loglik = lw;
    fit.boundary = true;
  }
  return fit;
}

struct HarmonicFit {
  HarmonicCovariance model;
  double loglik = 0.0;
  double loglik_white = 0.0;
  bool converged = false;
  bool warning = false;
  bool floored = false;  // optimizer lost to the nested white-noise point
  int iterations = 0;
  std::vector<double> trace;
  std::vector<double> params;
  std::string message;
  std::vector<int> mask;
};

namespace detail {

/// Gradient of the low-rank log-likelihood with respect to the real
/// embedded factor T and the nugget v, at fixed sufficient statistics.
inline void loglik_lowrank_grad(const LowRankWorkspace& ws,
                                const Eigen::MatrixXd& T, double v,
                                double* loglik, Eigen::MatrixXd* dT,
                                double* dv) {
  const Eigen::Index r = T.rows();
  const Eigen::MatrixXd PT = ws.P * T;
  Eigen::MatrixXd G = T.transpose() * PT;
  G.diagonal().array() += v;
  Eigen::LLT<Eigen::MatrixXd> llt(G);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("loglik gradient: inner factorization failed");
  double logdetG = 0.0;
  for (Eigen::Index i = 0; i < r; ++i)
    logdetG += 2.0 * std::log(llt.matrixL()(i, i));
  const Eigen::VectorXd w = T.transpose() * ws.b;
  const Eigen::VectorXd q = llt.solve(w);
  const double quad = (ws.zz - w.dot(q)) / v;
  *loglik = -0.5 * (double(ws.s) * std::log(2.0 * kPi) +
                    double(ws.s - r) * std::log(v) + logdetG + quad);
  const Eigen::MatrixXd Ginv = llt.solve(Eigen::MatrixXd::Identity(r, r));
  *dT = -PT * Ginv + (ws.b * q.transpose() - PT * q * q.transpose()) / v;
  *dv = -0.5 * (double(ws.s - r) / v + Ginv.trace() - quad / v +
                q.squaredNorm() / v);
}

/// Negative low-rank log-likelihood over free packed factor parameters
/// plus log-nugget, with analytic gradient chained through the real
/// embedding of the factors.
struct HarmonicMleCore {
  LowRankWorkspace ws;
  int N = 0;
  Eigen::Index full = 0, free_n = 0;
  std::vector<int> mask;

  static HarmonicMleCore make(LowRankWorkspace workspace,
                              std::vector<int> mask_idx) {
    HarmonicMleCore core;
    core.N = workspace.N;
    core.ws = std::move(workspace);
    core.mask = std::move(mask_idx);
    core.full = param_count(core.N);
    core.free_n = core.full - static_cast<Eigen::Index>(core.mask.size());
    return core;
  }

  Eigen::VectorXd embed(const Eigen::VectorXd& free_x) const {
    if (mask.empty()) return free_x;
    Eigen::VectorXd fullx = Eigen::VectorXd::Zero(full);
    fullx.tail(free_n) = free_x;
    return fullx;
  }

  double eval(const Eigen::VectorXd& free_x, Eigen::VectorXd* grad) const {
    const Eigen::VectorXd fullx = embed(free_x);
    double logv = 0.0;
    HarmonicCovariance m;
    m.factors = unpack_lower_blocks(fullx, N, &logv);
    m.N = N;
    m.nugget = std::exp(logv);
    const Eigen::MatrixXd T = real_coeff_factor(m);
    double L = 0.0;
    Eigen::MatrixXd dT;
    double dv = 0.0;
    loglik_lowrank_grad(ws, T, m.nugget, &L, &dT, &dv);
    if (grad) {
      Eigen::VectorXd gfull(full);
      Eigen::Index idx = 0;
      for (int mm = 0; mm <= N; ++mm) {
        const int d = N + 1 - mm;
        if (mm == 0) {
          for (int j = 0; j < d; ++j)
            for (int i = j; i < d; ++i) gfull[idx++] = -dT(i, j);
        } else {
          const int off = real_basis_index(N, mm, mm, false);
          for (int j = 0; j < d; ++j)
            for (int i = j; i < d; ++i) {
              const int r0 = off + 2 * i, c0 = off + 2 * j;
              const double gre = dT(r0, c0) + dT(r0 + 1, c0 + 1);
              if (i == j) {
                gfull[idx++] = -gre;
              } else {
                gfull[idx++] = -gre;
                gfull[idx++] = -(dT(r0, c0 + 1) - dT(r0 + 1, c0));
              }
            }
        }
      }
      gfull[idx] = -dv * m.nugget;
      *grad = mask.empty() ? gfull : Eigen::VectorXd(gfull.tail(free_n));
    }
    return -L;
  }
};

}  // namespace detail

/// Maximum likelihood over the triangular factors and log-nugget, using
/// the low-rank identity for every evaluation. The all-zero factor point
/// with the white-noise variance is a valid parameter, so the fit never
/// falls below the white-noise likelihood.
inline HarmonicFit mle_harmonic(
    std::span<const Observation> obs, int N,
    const std::optional<HarmonicCovariance>& init = std::nullopt,
    bool mask_zero_order_column = false, const OptimOptions& opt = {}) {
  const double vhat = mle_white_noise(obs);
  const int r = (N + 1) * (N + 1);
  const auto core = detail::HarmonicMleCore::make(
      make_lowrank_workspace(obs, N),
      mask_zero_order_column ? mask_first_column_indices(N)
                             : std::vector<int>{});
  const double lw = white_noise_loglik(vhat, core.ws.s, core.ws.zz);

  HarmonicCovariance start;
  if (init) {
    if (init->N != N)
      throw std::invalid_argument("mle_harmonic: init truncation mismatch");
    validate(*init);
    if (!(init->nugget > 0.0))
      throw std::invalid_argument("mle_harmonic: init nugget must be > 0");
    start = *init;
  } else {
    start.N = N;
    const double delta = std::sqrt(vhat / double(r));
    for (int m = 0; m <= N; ++m)
      start.factors.push_back(
          Eigen::MatrixXcd::Identity(N + 1 - m, N + 1 - m) * delta);
    start.nugget = 0.5 * vhat;
  }

  Eigen::VectorXd x0_full =
      pack_lower_blocks(start.factors, N, std::log(start.nugget));
  for (int idx : core.mask) x0_full[idx] = 0.0;

  Objective fg = [&core](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    return core.eval(x, g);
  };
  const auto res = minimize(fg, x0_full.tail(core.free_n), opt);

  HarmonicFit fit;
  fit.loglik_white = lw;
  fit.iterations = res.iterations;
  fit.trace = res.trace;
  fit.message = res.message;
  fit.converged = res.converged;
  fit.warning = !res.converged;
  fit.mask = core.mask;
  const double best = -res.value;
  if (best >= lw) {
    const Eigen::VectorXd fullx = core.embed(res.x);
    double logv = 0.0;
    fit.model.factors = unpack_lower_blocks(fullx, N, &logv);
    fit.model.N = N;
    fit.model.nugget = std::exp(logv);
    fit.model = canonicalize_signs(std::move(fit.model));
    fit.loglik = best;
    fit.params.assign(fullx.data(), fullx.data() + fullx.size());
  } else {
    fit.model.N = N;
    for (int m = 0; m <= N; ++m)
      fit.model.factors.push_back(
          Eigen::MatrixXcd::Zero(N + 1 - m, N + 1 - m));
    fit.model.nugget = vhat;
    fit.loglik = lw;
    fit.floored = true;
  }
  return fit;
}

/// Structured fit report: parameters, criterion trace, convergence, and
/// the frozen-parameter listing.
inline void write_fit_report(std::ostream& out, const std::string& label,
                             std::span<const double> params,
                             std::span<const double> trace, bool converged,
                             const std::string& message,
                             std::span<const int> mask) {
  out << "fit " << label << "\n";
  out << "converged " << (converged ? "yes" : "no") << "\n";
  if (!message.empty()) out << "status " << message << "\n";
  std::string row;
  out << "parameters " << params.size() << "\n";
  for (size_t i = 0; i < params.size(); ++i) {
    row.clear();
    row += "p ";
    row += std::to_string(i);
    row += ' ';
    detail::format_double(row, params[i]);
    row += '\n';
    out << row;
  }
  out << "trace " << trace.size() << "\n";
  for (size_t i = 0; i < trace.size(); ++i) {
    row.clear();
    row += "t ";
    row += std::to_string(i);
    row += ' ';
    detail::format_double(row, trace[i]);
    row += '\n';
    out << row;
  }
  out << "mask " << mask.size() << "\n";
  for (int idx : mask) out << "frozen " << idx << "\n";
}

}  // namespace axsym
