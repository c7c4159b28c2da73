#include <CLI11.hpp>

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "axsym/covariance.hpp"
#include "axsym/fitting.hpp"
#include "axsym/geo.hpp"
#include "axsym/harmonics.hpp"
#include "axsym/kriging.hpp"
#include "axsym/mean_model.hpp"
#include "axsym/simulate.hpp"
#include "axsym/variogram.hpp"

namespace {

using axsym::CovarianceModel;
using axsym::ExpChordalModel;
using axsym::GeoPoint;
using axsym::HarmonicCovariance;
using axsym::MeanModel;
using axsym::Observation;
using axsym::Orbit;

std::string fmt(double v) {
  std::string s;
  axsym::detail::format_double(s, v);
  return s;
}

// "-" selects the standard stream on both sides
template <class Fn>
void with_input(const std::string& path, Fn&& fn) {
  if (path == "-") {
    fn(std::cin);
    return;
  }
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open input file: " + path);
  fn(in);
}

template <class Fn>
void with_output(const std::string& path, Fn&& fn) {
  if (path == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  fn(out);
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path);
}

axsym::ObservationFile load_observations(const std::string& path) {
  axsym::ObservationFile file;
  with_input(path, [&](std::istream& in) { file = axsym::read_observations(in); });
  return file;
}

CovarianceModel load_model(const std::string& path) {
  CovarianceModel model;
  with_input(path, [&](std::istream& in) { model = axsym::read_model(in); });
  return model;
}

MeanModel load_mean(const std::string& path) {
  MeanModel mean;
  with_input(path, [&](std::istream& in) { mean = axsym::read_mean_model(in); });
  return mean;
}

std::vector<axsym::VariogramRecord> load_variogram(const std::string& path) {
  std::vector<axsym::VariogramRecord> recs;
  with_input(path, [&](std::istream& in) { recs = axsym::read_variogram(in); });
  return recs;
}

/// Target file: header `lat_deg lon_deg`, one point per row.
std::vector<GeoPoint> read_targets(std::istream& in) {
  std::vector<GeoPoint> out;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto f = axsym::detail::split_fields(line);
    if (f.empty() || f[0][0] == '#') continue;
    if (!have_header) {
      if (f.size() != 2 || f[0] != "lat_deg" || f[1] != "lon_deg")
        throw std::runtime_error("target file line " + std::to_string(line_no) +
                                 ": expected header 'lat_deg lon_deg'");
      have_header = true;
      continue;
    }
    if (f.size() != 2)
      throw std::runtime_error("target file line " + std::to_string(line_no) +
                               ": expected 2 fields");
    const double lat = axsym::detail::parse_double(f[0], line_no, "lat_deg");
    const double lon = axsym::detail::parse_double(f[1], line_no, "lon_deg");
    if (!std::isfinite(lat) || lat < -90.0 || lat > 90.0)
      throw std::runtime_error("target file line " + std::to_string(line_no) +
                               ": lat_deg outside [-90, 90]");
    if (!std::isfinite(lon))
      throw std::runtime_error("target file line " + std::to_string(line_no) +
                               ": lon_deg is not finite");
    out.push_back(GeoPoint{lat, axsym::wrap_lon(lon)});
  }
  if (!have_header) throw std::runtime_error("empty target file");
  return out;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

struct IngestOpts {
  std::string in;
  std::string out = "-";
};

void run_ingest(const IngestOpts& o) {
  const auto file = load_observations(o.in);
  with_output(o.out, [&](std::ostream& out) {
    axsym::write_observations(out, file.observations, file.kind);
  });
  std::cerr << "ingest: " << file.observations.size() << " observations in "
            << axsym::group_orbits(file.observations).size() << " orbits\n";
}

struct MeanFitOpts {
  std::string obs;
  std::string out;
};

void run_mean_fit(const MeanFitOpts& o) {
  const auto file = load_observations(o.obs);
  const auto fit = axsym::fit_mean(file.observations);
  with_output(o.out, [&](std::ostream& out) {
    axsym::write_mean_model(out, fit.model);
  });
  std::cout << "bins " << fit.bin_count << "\n"
            << "r2_bins " << fmt(fit.r2_bins) << "\n"
            << "r2_raw " << fmt(fit.r2_raw) << "\n";
}

struct ResidualsOpts {
  std::string obs;
  std::string mean;
  std::string out = "-";
};

void run_residuals(const ResidualsOpts& o) {
  const auto file = load_observations(o.obs);
  const auto mean = load_mean(o.mean);
  const auto res = axsym::residuals(file.observations, mean);
  with_output(o.out, [&](std::ostream& out) {
    axsym::write_observations(out, res, axsym::ValueKind::kResidualLog);
  });
}

struct VariogramOpts {
  std::string obs;
  std::string out = "-";
  axsym::PairConfig cfg;
  int orbit_lag = 0;
};

void run_variogram(const VariogramOpts& o) {
  const auto file = load_observations(o.obs);
  const auto orbits = axsym::group_orbits(file.observations);
  const auto records =
      o.orbit_lag == 0
          ? axsym::bin_variogram(std::span<const Orbit>(orbits), o.cfg)
          : axsym::cross_orbit_variogram(std::span<const Orbit>(orbits),
                                         o.orbit_lag, o.cfg);
  with_output(o.out, [&](std::ostream& out) {
    axsym::write_variogram(out, records);
  });
  std::cerr << "variogram: " << records.size() << " bins\n";
}

struct WlsFitOpts {
  std::string variogram;
  int n = 0;
  std::string out = "-";
  std::string report;
  std::string gamma_grid;
  axsym::OptimOptions opt;
};

void run_wls_fit(const WlsFitOpts& o) {
  auto records = load_variogram(o.variogram);
  const auto problem = axsym::make_wls_problem(std::move(records), o.n);
  const auto lin = axsym::wls_fit_linear(problem);
  const auto fit =
      axsym::wls_fit_psd(problem, axsym::psd_init_from_linear(lin), o.opt);
  with_output(o.out, [&](std::ostream& out) {
    axsym::write_model(out, fit.model);
  });
  if (!o.report.empty()) {
    const Eigen::VectorXd params =
        axsym::pack_lower_blocks(fit.model.factors, o.n, fit.model.nugget);
    with_output(o.report, [&](std::ostream& out) {
      axsym::write_fit_report(
          out, "wls-psd",
          std::span<const double>(params.data(), size_t(params.size())),
          fit.trace, fit.converged, fit.message, fit.mask);
    });
  }
  if (!o.gamma_grid.empty()) {
    auto grid = problem.records;
    const axsym::CovarianceEvaluator ev(fit.model);
    for (auto& r : grid) {
      const auto a = axsym::detail::record_args(r);
      r.gamma_hat = ev.semivariance(a.lat1, a.lat2, a.dlon);
    }
    with_output(o.gamma_grid, [&](std::ostream& out) {
      axsym::write_variogram(out, grid);
    });
  }
  std::cerr << "wls-fit: N " << o.n << ", records " << problem.records.size()
            << ", linear criterion " << fmt(lin.criterion)
            << (lin.rank_deficient ? " (rank deficient)" : "")
            << ", projected criterion " << fmt(fit.criterion) << ", converged "
            << (fit.converged ? "yes" : "no") << "\n";
}

struct LoglikOpts {
  std::string model;
  std::string obs;
  bool dense = false;
};

void run_loglik(const LoglikOpts& o) {
  const auto model = load_model(o.model);
  const auto file = load_observations(o.obs);
  const auto& obs = file.observations;
  if (obs.empty()) throw std::runtime_error("loglik: no observations");
  double value = 0.0;
  if (const auto* h = std::get_if<HarmonicCovariance>(&model)) {
    if (o.dense) {
      std::vector<GeoPoint> pts;
      Eigen::VectorXd z;
      axsym::detail::split_obs(obs, &pts, &z);
      value = axsym::loglik_dense(axsym::covariance_matrix(*h, pts), z);
    } else {
      value = axsym::loglik_lowrank(*h, std::span<const Observation>(obs));
    }
  } else {
    const auto& e = std::get<ExpChordalModel>(model);
    std::vector<GeoPoint> pts;
    Eigen::VectorXd z;
    axsym::detail::split_obs(obs, &pts, &z);
    value = axsym::loglik_dense(axsym::covariance_matrix(e, pts), z);
  }
  std::cout << fmt(value) << "\n";
}

struct MleOpts {
  std::string kind;
  std::string obs;
  int n = -1;
  std::string init;
  bool mask_zero_order_column = false;
  std::string out;
  std::string report;
  axsym::OptimOptions opt;
};

void run_mle(const MleOpts& o) {
  const auto file = load_observations(o.obs);
  const auto& obs = file.observations;
  const std::span<const Observation> span(obs);
  if (o.kind == "white") {
    if (obs.empty()) throw std::runtime_error("mle: no observations");
    axsym::CompensatedSum acc;
    for (const auto& ob : obs) acc.add(ob.value * ob.value);
    const double sumsq = acc.value();
    const double variance = sumsq / double(obs.size());
    const double loglik = axsym::white_noise_loglik(
        variance, static_cast<Eigen::Index>(obs.size()), sumsq);
    std::cout << "variance " << fmt(variance) << "\n"
              << "loglik " << fmt(loglik) << "\n";
    return;
  }
  if (o.kind == "exp") {
    const auto fit = axsym::mle_exp_nugget(span, o.opt);
    if (!o.out.empty())
      with_output(o.out, [&](std::ostream& out) {
        axsym::write_model(out, fit.model);
      });
    if (!o.report.empty()) {
      const double params[] = {fit.model.theta1, fit.model.theta2,
                               fit.model.nugget};
      with_output(o.report, [&](std::ostream& out) {
        axsym::write_fit_report(out, "mle-exp", params, fit.trace,
                                fit.converged, fit.message, {});
      });
    }
    std::cout << "loglik " << fmt(fit.loglik) << "\n"
              << "loglik_white " << fmt(fit.loglik_white) << "\n"
              << "converged " << (fit.converged ? "yes" : "no") << "\n"
              << "boundary " << (fit.boundary ? "yes" : "no") << "\n";
    return;
  }
  // harmonic
  if (o.n < 0)
    throw CLI::ValidationError("mle", "--n is required for kind 'harmonic'");
  std::optional<HarmonicCovariance> init;
  if (!o.init.empty()) {
    auto m = load_model(o.init);
    const auto* h = std::get_if<HarmonicCovariance>(&m);
    if (!h)
      throw std::runtime_error("mle: --init model is not a harmonic model");
    init = *h;
  }
  const auto fit =
      axsym::mle_harmonic(span, o.n, init, o.mask_zero_order_column, o.opt);
  if (!o.out.empty())
    with_output(o.out, [&](std::ostream& out) {
      axsym::write_model(out, fit.model);
    });
  if (!o.report.empty())
    with_output(o.report, [&](std::ostream& out) {
      axsym::write_fit_report(out, "mle-harmonic", fit.params, fit.trace,
                              fit.converged, fit.message, fit.mask);
    });
  std::cout << "loglik " << fmt(fit.loglik) << "\n"
            << "loglik_white " << fmt(fit.loglik_white) << "\n"
            << "converged " << (fit.converged ? "yes" : "no") << "\n"
            << "floored " << (fit.floored ? "yes" : "no") << "\n";
}

struct KrigeOpts {
  std::string model;
  std::string obs;
  std::string targets;
  std::string out = "-";
};

void run_krige(const KrigeOpts& o) {
  const auto model = load_model(o.model);
  const auto file = load_observations(o.obs);
  std::vector<GeoPoint> targets;
  with_input(o.targets, [&](std::istream& in) { targets = read_targets(in); });
  const auto result = std::visit(
      [&](const auto& m) {
        return axsym::krige_residuals(
            m, std::span<const Observation>(file.observations), targets);
      },
      model);
  with_output(o.out, [&](std::ostream& out) {
    out << "lat_deg\tlon_deg\tprediction_log\tvar_log\n";
    std::string row;
    for (size_t i = 0; i < targets.size(); ++i) {
      row.clear();
      axsym::detail::format_double(row, targets[i].lat);
      row += '\t';
      axsym::detail::format_double(row, targets[i].lon);
      row += '\t';
      axsym::detail::format_double(row, result.predictions[i]);
      row += '\t';
      axsym::detail::format_double(row, result.variances[i]);
      row += '\n';
      out << row;
    }
  });
}

struct Level25Opts {
  std::string obs;
  std::string model;
  std::string mean;
  std::string out = "-";
  axsym::GridSpec grid;
  axsym::LatWindow window;
  std::vector<long long> include;
  int threads = 1;
};

void run_level25(const Level25Opts& o) {
  const auto model = load_model(o.model);
  const auto mean = load_mean(o.mean);
  const auto file = load_observations(o.obs);
  const auto orbits = axsym::group_orbits(file.observations);
  const auto records = std::visit(
      [&](const auto& m) {
        return axsym::level25_product(std::span<const Orbit>(orbits), m, mean,
                                      o.grid, o.window, o.include, &std::cerr,
                                      o.threads);
      },
      model);
  with_output(o.out, [&](std::ostream& out) {
    axsym::write_product(out, records);
  });
  std::cerr << "level25: " << records.size() << " gridded records\n";
}

struct SimulateOpts {
  std::string model;
  std::uint64_t seed = 0;
  std::string out = "-";
  axsym::SwathConfig cfg;
};

void run_simulate(const SimulateOpts& o) {
  const auto model = load_model(o.model);
  const auto* h = std::get_if<HarmonicCovariance>(&model);
  if (!h) throw std::runtime_error("simulate: model must be a harmonic model");
  const auto orbits = axsym::simulate_observations(*h, o.cfg, o.seed);
  const auto flat = axsym::flatten(orbits);
  with_output(o.out, [&](std::ostream& out) {
    axsym::write_observations(out, flat, axsym::ValueKind::kResidualLog);
  });
  std::cerr << "simulate: " << flat.size() << " observations in "
            << orbits.size() << " orbits, seed " << o.seed << "\n";
}

// ---------------------------------------------------------------------------
// verify: self-contained oracle cross-checks
// ---------------------------------------------------------------------------

HarmonicCovariance verify_random_model(int N, std::mt19937& rng, double nugget,
                                       double scale) {
  std::normal_distribution<double> g(0.0, scale);
  HarmonicCovariance model;
  model.N = N;
  model.nugget = nugget;
  for (int m = 0; m <= N; ++m) {
    const int d = N - m + 1;
    Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j <= i; ++j) {
        const double re = g(rng);
        const double im = (m >= 1 && j < i) ? g(rng) : 0.0;
        A(i, j) = std::complex<double>(re, im);
      }
    model.factors.push_back(std::move(A));
  }
  return model;
}

std::vector<Observation> verify_random_obs(int count, std::mt19937& rng) {
  std::uniform_real_distribution<double> lat(-88.0, 88.0);
  std::uniform_real_distribution<double> lon(-180.0, 180.0);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Observation> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    Observation o;
    o.time_s = double(i);
    o.point = GeoPoint{lat(rng), lon(rng)};
    o.value = g(rng);
    out.push_back(o);
  }
  return out;
}

double legendre_plain(int n, double x) {
  double p0 = 1.0, p1 = x;
  if (n == 0) return p0;
  if (n == 1) return p1;
  for (int k = 2; k <= n; ++k) {
    const double p = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
    p0 = p1;
    p1 = p;
  }
  return p1;
}

struct VerifyCheck {
  std::string name;
  double worst = 0.0;
  double tol = 0.0;
  bool pass() const { return worst < tol; }
};

VerifyCheck verify_loglik() {
  VerifyCheck c{"loglik low-rank vs dense", 0.0, 1e-8};
  const int orders[] = {2, 3, 4, 2, 3};
  for (int trial = 0; trial < 5; ++trial) {
    std::mt19937 rng(1200 + trial);
    const auto model =
        verify_random_model(orders[trial], rng, 0.05 + 0.03 * trial, 0.7);
    const auto obs = verify_random_obs(120, rng);
    std::vector<GeoPoint> pts;
    Eigen::VectorXd z;
    axsym::detail::split_obs(obs, &pts, &z);
    const double dense =
        axsym::loglik_dense(axsym::covariance_matrix(model, pts), z);
    const double lowrank =
        axsym::loglik_lowrank(model, std::span<const Observation>(obs));
    c.worst = std::max(c.worst, std::abs(lowrank - dense) / std::abs(dense));
  }
  return c;
}

VerifyCheck verify_kriging() {
  VerifyCheck c{"kriging low-rank vs dense", 0.0, 1e-8};
  for (int trial = 0; trial < 2; ++trial) {
    std::mt19937 rng(1300 + trial);
    const auto model = verify_random_model(2 + trial, rng, 0.1, 0.7);
    const auto obs = verify_random_obs(100, rng);
    std::vector<GeoPoint> targets;
    {
      std::uniform_real_distribution<double> lat(-88.0, 88.0);
      std::uniform_real_distribution<double> lon(-180.0, 180.0);
      for (int i = 0; i < 20; ++i)
        targets.push_back(GeoPoint{lat(rng), lon(rng)});
    }
    const auto lr = axsym::krige_residuals(
        model, std::span<const Observation>(obs), targets);
    const auto dn = axsym::krige_residuals_dense(
        model, std::span<const Observation>(obs), targets);
    for (size_t j = 0; j < targets.size(); ++j) {
      c.worst = std::max(
          c.worst, std::abs(lr.predictions[j] - dn.predictions[j]) /
                       std::max(1.0, std::abs(dn.predictions[j])));
      c.worst = std::max(c.worst,
                         std::abs(lr.variances[j] - dn.variances[j]) /
                             std::max(1.0, std::abs(dn.variances[j])));
    }
  }
  return c;
}

VerifyCheck verify_addition_theorem() {
  VerifyCheck c{"addition theorem", 0.0, 1e-10};
  std::mt19937 rng(1400);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::uniform_real_distribution<double> lat(-90.0, 90.0);
  std::uniform_real_distribution<double> lon(-180.0, 180.0);
  const int N = 5;
  Eigen::VectorXd coef(N + 1);
  for (int n = 0; n <= N; ++n) coef[n] = u(rng);
  HarmonicCovariance model;
  model.N = N;
  model.nugget = 0.0;
  for (int m = 0; m <= N; ++m) {
    Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(N - m + 1, N - m + 1);
    for (int n = m; n <= N; ++n) A(n - m, n - m) = std::sqrt(coef[n]);
    model.factors.push_back(std::move(A));
  }
  const axsym::CovarianceEvaluator ev(model);
  for (int i = 0; i < 200; ++i) {
    const GeoPoint p{lat(rng), lon(rng)}, q{lat(rng), lon(rng)};
    const double cg = std::cos(axsym::deg2rad(axsym::central_angle(p, q)));
    double expect = 0.0;
    for (int n = 0; n <= N; ++n)
      expect += coef[n] * 0.5 * (2 * n + 1) * legendre_plain(n, cg);
    const double got =
        ev.covariance(p.lat, q.lat, axsym::lon_diff(p.lon, q.lon));
    c.worst = std::max(c.worst, std::abs(got - expect));
  }
  return c;
}

VerifyCheck verify_degeneracy() {
  VerifyCheck c{"zero-degree row degeneracy", 0.0, 1e-12};
  std::mt19937 rng(1500);
  const auto model = verify_random_model(3, rng, 0.1, 0.8);
  auto blocks = axsym::assemble_blocks(model);
  auto perturbed = blocks;
  perturbed[0](0, 0) += 0.37;
  for (int n = 1; n <= model.N; ++n) {
    perturbed[0](0, n) += 0.21 * n;
    perturbed[0](n, 0) += 0.21 * n;
  }
  const axsym::CovarianceEvaluator base(model.N, blocks, model.nugget);
  const axsym::CovarianceEvaluator bumped(model.N, perturbed, model.nugget);
  std::uniform_real_distribution<double> lat(-89.0, 89.0);
  std::uniform_real_distribution<double> lon(-180.0, 180.0);
  for (int i = 0; i < 300; ++i) {
    const double l1 = lat(rng), l2 = lat(rng), dl = lon(rng);
    c.worst = std::max(c.worst, std::abs(base.semivariance(l1, l2, dl) -
                                         bumped.semivariance(l1, l2, dl)));
  }
  return c;
}

VerifyCheck verify_real_embedding() {
  VerifyCheck c{"real coefficient embedding", 0.0, 1e-10};
  for (int trial = 0; trial < 3; ++trial) {
    std::mt19937 rng(1600 + trial);
    const auto model = verify_random_model(3 + trial % 2, rng, 0.2, 0.8);
    const auto obs = verify_random_obs(50, rng);
    std::vector<GeoPoint> pts;
    Eigen::VectorXd z;
    axsym::detail::split_obs(obs, &pts, &z);
    const Eigen::MatrixXd B =
        axsym::basis_matrix(model.N, std::span<const GeoPoint>(pts));
    const Eigen::MatrixXd T = axsym::real_coeff_factor(model);
    const Eigen::MatrixXd lhs = B * T * T.transpose() * B.transpose();
    Eigen::MatrixXd rhs = axsym::covariance_matrix(model, pts);
    rhs.diagonal().array() -= model.nugget;
    c.worst = std::max(c.worst, (lhs - rhs).cwiseAbs().maxCoeff());
  }
  return c;
}

void run_verify() {
  const VerifyCheck checks[] = {verify_loglik(), verify_kriging(),
                                verify_addition_theorem(), verify_degeneracy(),
                                verify_real_embedding()};
  bool all_pass = true;
  char line[128];
  std::snprintf(line, sizeof line, "%-28s  %-12s  %-8s  %s", "check",
                "worst", "tol", "result");
  std::cout << line << "\n";
  for (const auto& c : checks) {
    std::snprintf(line, sizeof line, "%-28s  %-12.3e  %-8.0e  %s",
                  c.name.c_str(), c.worst, c.tol,
                  c.pass() ? "PASS" : "FAIL");
    std::cout << line << "\n";
    all_pass = all_pass && c.pass();
  }
  if (!all_pass) throw std::runtime_error("verification failed");
}

void add_optimizer_flags(CLI::App* cmd, axsym::OptimOptions* opt) {
  cmd->add_option("--max-iterations", opt->max_iterations,
                  "optimizer iteration budget");
  cmd->add_option("--gradient-tol", opt->gradient_tol,
                  "gradient infinity-norm stopping tolerance");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "axsym: axially symmetric Gaussian process models on the sphere.\n"
      "Fits mean surfaces and covariance models to swath observations,\n"
      "evaluates exact likelihoods, kriges residuals, and emits per-orbit\n"
      "gridded products. Paths accept '-' for the standard streams."};
  app.require_subcommand(1);

  auto ingest_opts = std::make_shared<IngestOpts>();
  auto* ingest = app.add_subcommand(
      "ingest", "validate and normalize an observation file");
  ingest->add_option("--in", ingest_opts->in, "observation file")->required();
  ingest->add_option("--out", ingest_opts->out, "normalized output");
  ingest->callback([ingest_opts] { run_ingest(*ingest_opts); });

  auto mean_opts = std::make_shared<MeanFitOpts>();
  auto* mean_fit = app.add_subcommand(
      "mean-fit", "fit the spatial mean surface to bin averages");
  mean_fit->add_option("--obs", mean_opts->obs, "observation file")
      ->required();
  mean_fit->add_option("--out", mean_opts->out, "mean model output file")
      ->required();
  mean_fit->callback([mean_opts] { run_mean_fit(*mean_opts); });

  auto res_opts = std::make_shared<ResidualsOpts>();
  auto* residuals = app.add_subcommand(
      "residuals", "subtract a fitted mean surface from observations");
  residuals->add_option("--obs", res_opts->obs, "observation file")
      ->required();
  residuals->add_option("--mean", res_opts->mean, "mean model file")
      ->required();
  residuals->add_option("--out", res_opts->out, "residual output file");
  residuals->callback([res_opts] { run_residuals(*res_opts); });

  auto vg_opts = std::make_shared<VariogramOpts>();
  auto* variogram = app.add_subcommand(
      "variogram", "binned empirical variogram of within-orbit pairs");
  variogram->add_option("--obs", vg_opts->obs, "residual observation file")
      ->required();
  variogram->add_option("--out", vg_opts->out, "variogram output file");
  variogram->add_option("--band-anchor-step", vg_opts->cfg.band_anchor_step,
                        "latitude band anchor spacing, degrees");
  variogram->add_option("--band-width", vg_opts->cfg.band_width,
                        "latitude band width, degrees");
  variogram->add_option("--p-min", vg_opts->cfg.p_min, "lowest band index");
  variogram->add_option("--p-max", vg_opts->cfg.p_max, "highest band index");
  variogram->add_option("--max-lat-offset", vg_opts->cfg.max_lat_offset,
                        "pair latitude offset window, degrees");
  variogram->add_option("--max-lon-offset", vg_opts->cfg.max_lon_offset,
                        "pair longitude offset window, degrees");
  variogram->add_option("--lat-bin", vg_opts->cfg.lat_bin,
                        "offset bin height, degrees");
  variogram->add_option("--lon-bin", vg_opts->cfg.lon_bin,
                        "offset bin width, degrees");
  variogram->add_option("--orbit-lag", vg_opts->orbit_lag,
                        "pair seconds from the orbit this many ids later");
  variogram->callback([vg_opts] { run_variogram(*vg_opts); });

  auto wls_opts = std::make_shared<WlsFitOpts>();
  auto* wls = app.add_subcommand(
      "wls-fit", "weighted least squares fit of a harmonic covariance model "
                 "to a binned variogram");
  wls->add_option("--variogram", wls_opts->variogram, "variogram file")
      ->required();
  wls->add_option("--n", wls_opts->n, "truncation order")
      ->required()
      ->check(CLI::NonNegativeNumber);
  wls->add_option("--out", wls_opts->out, "model output file");
  wls->add_option("--report", wls_opts->report, "fit report output file");
  wls->add_option("--emit-gamma-grid", wls_opts->gamma_grid,
                  "write the fitted model's variogram on the input grid");
  add_optimizer_flags(wls, &wls_opts->opt);
  wls->callback([wls_opts] { run_wls_fit(*wls_opts); });

  auto ll_opts = std::make_shared<LoglikOpts>();
  auto* loglik = app.add_subcommand(
      "loglik", "exact Gaussian log-likelihood of a model on observations");
  loglik->add_option("--model", ll_opts->model, "model file")->required();
  loglik->add_option("--obs", ll_opts->obs, "observation file")->required();
  loglik->add_flag("--dense", ll_opts->dense,
                   "force the dense solve for harmonic models");
  loglik->callback([ll_opts] { run_loglik(*ll_opts); });

  auto mle_opts = std::make_shared<MleOpts>();
  auto* mle = app.add_subcommand(
      "mle", "maximum likelihood fit: white noise, exponential-in-chord "
             "with nugget, or harmonic with nugget");
  mle->add_option("kind", mle_opts->kind, "model family")
      ->required()
      ->check(CLI::IsMember({"white", "exp", "harmonic"}));
  mle->add_option("--obs", mle_opts->obs, "residual observation file")
      ->required();
  mle->add_option("--n", mle_opts->n, "truncation order (harmonic)");
  mle->add_option("--init", mle_opts->init,
                  "initial harmonic model file (harmonic)");
  mle->add_flag("--mask-zero-order-column", mle_opts->mask_zero_order_column,
                "freeze the variogram-unidentifiable factor column "
                "(harmonic)");
  mle->add_option("--out", mle_opts->out, "fitted model output file");
  mle->add_option("--report", mle_opts->report, "fit report output file");
  add_optimizer_flags(mle, &mle_opts->opt);
  mle->callback([mle_opts] { run_mle(*mle_opts); });

  auto krige_opts = std::make_shared<KrigeOpts>();
  auto* krige = app.add_subcommand(
      "krige", "simple kriging of residuals to target points");
  krige->add_option("--model", krige_opts->model, "model file")->required();
  krige->add_option("--obs", krige_opts->obs, "residual observation file")
      ->required();
  krige->add_option("--targets", krige_opts->targets,
                    "target file with header 'lat_deg lon_deg'")
      ->required();
  krige->add_option("--out", krige_opts->out, "prediction output file");
  krige->callback([krige_opts] { run_krige(*krige_opts); });

  auto l25_opts = std::make_shared<Level25Opts>();
  auto* level25 = app.add_subcommand(
      "level25", "per-orbit gridded median product from kriged residuals");
  level25->add_option("--obs", l25_opts->obs, "residual observation file")
      ->required();
  level25->add_option("--model", l25_opts->model, "covariance model file")
      ->required();
  level25->add_option("--mean", l25_opts->mean, "mean model file")->required();
  level25->add_option("--out", l25_opts->out, "product output file");
  level25->add_option("--grid-lat-min", l25_opts->grid.lat_min,
                      "southernmost grid latitude");
  level25->add_option("--grid-lat-max", l25_opts->grid.lat_max,
                      "northernmost grid latitude");
  level25->add_option("--grid-lat-step", l25_opts->grid.lat_step,
                      "latitude spacing, degrees");
  level25->add_option("--grid-lon-min", l25_opts->grid.lon_min,
                      "westernmost grid longitude");
  level25->add_option("--grid-lon-max", l25_opts->grid.lon_max,
                      "easternmost grid longitude");
  level25->add_option("--grid-lon-step", l25_opts->grid.lon_step,
                      "longitude spacing, degrees");
  level25->add_option("--lat-window-min", l25_opts->window.min_deg,
                      "lowest observation latitude used");
  level25->add_option("--lat-window-max", l25_opts->window.max_deg,
                      "highest observation latitude used");
  level25->add_option("--include", l25_opts->include,
                      "orbit ids to keep (default: all)")
      ->delimiter(',');
  level25->add_option("--threads", l25_opts->threads,
                      "worker cap for per-orbit kriging")
      ->check(CLI::PositiveNumber);
  level25->callback([l25_opts] { run_level25(*l25_opts); });

  auto sim_opts = std::make_shared<SimulateOpts>();
  auto* simulate = app.add_subcommand(
      "simulate", "sample a harmonic model over synthetic swath orbits");
  simulate->add_option("--model", sim_opts->model, "harmonic model file")
      ->required();
  simulate->add_option("--seed", sim_opts->seed, "random stream seed")
      ->required();
  simulate->add_option("--out", sim_opts->out, "observation output file");
  simulate->add_option("--orbits", sim_opts->cfg.orbits, "orbit count");
  simulate->add_option("--scans-per-orbit", sim_opts->cfg.scans_per_orbit,
                       "scans per orbit");
  simulate->add_option("--points-per-scan", sim_opts->cfg.points_per_scan,
                       "points per cross-track scan");
  simulate->add_option("--inclination", sim_opts->cfg.inclination_deg,
                       "orbital inclination, degrees");
  simulate->add_option("--half-width", sim_opts->cfg.half_width_deg,
                       "cross-track half width, degrees");
  simulate->add_option("--node-lon0", sim_opts->cfg.node_lon0_deg,
                       "first ascending node longitude, degrees");
  simulate->add_option("--node-drift", sim_opts->cfg.node_drift_deg,
                       "node drift per orbit, degrees");
  simulate->add_option("--scan-period", sim_opts->cfg.scan_period_s,
                       "seconds between scans");
  simulate->add_option("--orbit-period", sim_opts->cfg.orbit_period_s,
                       "seconds per orbit");
  simulate->add_option("--lat-min", sim_opts->cfg.lat_min,
                       "discard points south of this latitude");
  simulate->add_option("--lat-max", sim_opts->cfg.lat_max,
                       "discard points north of this latitude");
  simulate->callback([sim_opts] { run_simulate(*sim_opts); });

  auto* verify = app.add_subcommand(
      "verify", "run the oracle cross-checks and print a pass/fail table");
  verify->callback([] { run_verify(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
