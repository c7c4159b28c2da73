#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace axsym {

/// Objective callback: returns the criterion value at x and fills *grad
/// (same dimension as x) when grad is non-null.
using Objective =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct OptimOptions {
  int max_iterations = 300;
  double gradient_tol = 1e-6;        // infinity norm of the gradient
  double relative_change_tol = 1e-10;
  int history = 12;                  // limited-memory pairs kept
  int max_line_search_steps = 50;
};

struct OptimResult {
  Eigen::VectorXd x;  // best accepted iterate
  double value = std::numeric_limits<double>::infinity();
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  std::vector<double> trace;  // criterion at accepted iterates, nonincreasing
};

namespace detail {

struct WolfeEval {
  double f = std::numeric_limits<double>::infinity();
  double slope = 0.0;
  Eigen::VectorXd x, g;
  bool finite = false;
};

}  // namespace detail

/// Limited-memory quasi-Newton minimization with a strong Wolfe line
/// search. Always returns the best iterate seen; converged is false when
/// the iteration budget runs out first.
inline OptimResult minimize(const Objective& fg, Eigen::VectorXd x0,
                            const OptimOptions& opt = {}) {
  const double c1 = 1e-4, c2 = 0.9;
  OptimResult res;
  const auto n = x0.size();
  Eigen::VectorXd x = std::move(x0);
  Eigen::VectorXd g(n);
  double f = fg(x, &g);
  ++res.evaluations;
  if (!std::isfinite(f))
    throw std::invalid_argument("minimize: objective not finite at start");
  res.x = x;
  res.value = f;
  res.gradient = g;
  res.trace.push_back(f);

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;

  auto eval_at = [&](const Eigen::VectorXd& base, const Eigen::VectorXd& dir,
                     double t) {
    detail::WolfeEval e;
    e.x = base + t * dir;
    e.g.resize(n);
    e.f = fg(e.x, &e.g);
    ++res.evaluations;
    e.finite = std::isfinite(e.f) && e.g.allFinite();
    e.slope = e.finite ? e.g.dot(dir) : 0.0;
    return e;
  };

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    res.iterations = iter;
    if (g.lpNorm<Eigen::Infinity>() <= opt.gradient_tol) {
      res.converged = true;
      res.message = "gradient norm below tolerance";
      return res;
    }

    // two-loop recursion for the quasi-Newton direction
    Eigen::VectorXd q = g;
    std::vector<double> alpha(s_hist.size());
    for (size_t i = s_hist.size(); i-- > 0;) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) {
      const double gamma =
          s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd dir = -q;
    double slope0 = g.dot(dir);
    if (!(slope0 < 0.0)) {  // fall back to steepest descent
      dir = -g;
      slope0 = -g.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    // strong Wolfe search: bracket then bisect
    detail::WolfeEval lo, hi, accepted;
    lo.f = f;
    lo.slope = slope0;
    double t_lo = 0.0, t = 1.0, t_hi = 0.0;
    bool bracketed = false, found = false;
    double f_lo = f;
    for (int ls = 0; ls < opt.max_line_search_steps; ++ls) {
      auto e = eval_at(x, dir, t);
      if (!e.finite || e.f > f + c1 * t * slope0 ||
          (bracketed == false && ls > 0 && e.f >= f_lo)) {
        t_hi = t;
        hi = e;
        bracketed = true;
      } else if (std::abs(e.slope) <= -c2 * slope0) {
        accepted = e;
        found = true;
        break;
      } else if (e.slope >= 0.0) {
        t_hi = t_lo;
        hi = lo;
        t_lo = t;
        lo = e;
        f_lo = e.f;
        bracketed = true;
      } else if (!bracketed) {
        t_lo = t;
        lo = e;
        f_lo = e.f;
        t *= 2.0;
        continue;
      } else {
        t_lo = t;
        lo = e;
        f_lo = e.f;
      }
      if (bracketed) {
        t = 0.5 * (t_lo + t_hi);
        if (std::abs(t_hi - t_lo) < 1e-16 * (1.0 + std::abs(t_lo))) break;
      }
    }
    if (!found) {
      // accept the best sufficient-decrease point if any
      if (lo.finite && lo.f < f) {
        accepted = lo;
        found = true;
      } else {
        res.message = "line search failed";
        return res;
      }
    }

    const Eigen::VectorXd s = accepted.x - x;
    const Eigen::VectorXd yv = accepted.g - g;
    const double prev_f = f;
    x = accepted.x;
    f = accepted.f;
    g = accepted.g;
    if (f < res.value) {
      res.x = x;
      res.value = f;
      res.gradient = g;
    }
    res.trace.push_back(res.value);

    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(yv);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.history) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }

    if (std::abs(prev_f - f) <=
        opt.relative_change_tol * std::max(1.0, std::abs(prev_f))) {
      res.iterations = iter + 1;
      res.converged = true;
      res.message = "relative criterion change below tolerance";
      return res;
    }
  }
  res.iterations = opt.max_iterations;
  res.message = "iteration budget exhausted; best iterate returned";
  return res;
}

}  // namespace axsym
