// End-to-end tests for the command line tool. Each test shells out to the
// built binary (path injected as AXSYM_CLI_PATH) inside a private temp dir.

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "axsym/covariance.hpp"
#include "axsym/fitting.hpp"
#include "axsym/geo.hpp"
#include "axsym/kriging.hpp"
#include "axsym/mean_model.hpp"
#include "axsym/simulate.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  std::string s;
  axsym::detail::format_double(s, v);
  return s;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           (std::string("axsym_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const {
    return (dir_ / name).string();
  }

  // Runs `axsym <args>`, capturing stdout/stderr into files in the temp dir.
  // `extra` is appended after the redirections (for `< input` style tests).
  int run(const std::string& args, const std::string& extra = "") {
    std::string cmd = std::string(AXSYM_CLI_PATH) + " " + args + " >" +
                      path("stdout.txt") + " 2>" + path("stderr.txt");
    if (!extra.empty()) cmd += " " + extra;
    const int rc = std::system(cmd.c_str());
    EXPECT_TRUE(WIFEXITED(rc)) << "command did not exit normally: " << cmd;
    return WEXITSTATUS(rc);
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  std::string out() const { return slurp(path("stdout.txt")); }
  std::string err() const { return slurp(path("stderr.txt")); }

  template <typename Fn>
  std::string write_file(const std::string& name, Fn&& fill) const {
    const std::string p = path(name);
    std::ofstream f(p, std::ios::binary);
    fill(f);
    return p;
  }

  std::string write_text(const std::string& name,
                         const std::string& text) const {
    return write_file(name, [&](std::ostream& f) { f << text; });
  }

  fs::path dir_;
};

axsym::HarmonicCovariance demo_model(unsigned seed, int N, double nugget) {
  std::mt19937 rng(seed);
  return axsym_test::random_model(N, rng, nugget, 0.5);
}

std::vector<axsym::Observation> demo_obs(unsigned seed, int count,
                                         double lat_lo = -70.0,
                                         double lat_hi = -50.0) {
  std::mt19937 rng(seed);
  const auto pts = axsym_test::random_points(count, rng, lat_lo, lat_hi);
  std::normal_distribution<double> g(0.0, 0.6);
  std::vector<axsym::Observation> obs;
  obs.reserve(pts.size());
  for (size_t i = 0; i < pts.size(); ++i)
    obs.push_back({static_cast<long long>(i % 3), 10.0 * double(i), pts[i],
                   g(rng)});
  return obs;
}

}  // namespace

TEST_F(CliTest, HelpExitsZero) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_NE(out().find("ingest"), std::string::npos);
  EXPECT_EQ(run("krige --help"), 0);
  EXPECT_NE(out().find("--targets"), std::string::npos);
}

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("wls-fit --bogus"), 1);
  EXPECT_EQ(run("loglik --model m.txt"), 1);  // missing required --obs
  EXPECT_EQ(run("level25 --obs a --model b --mean c --threads 0"), 1);
  const std::string obs = write_file("obs.txt", [](std::ostream& f) {
    axsym::write_observations(f, demo_obs(1, 8),
                              axsym::ValueKind::kResidualLog);
  });
  EXPECT_EQ(run("mle harmonic --obs " + obs), 1);  // harmonic needs --n
}

TEST_F(CliTest, DataErrorsExitTwo) {
  const std::string model = write_file("m.txt", [](std::ostream& f) {
    axsym::write_model(f, demo_model(2, 2, 0.1));
  });
  EXPECT_EQ(run("loglik --model " + model + " --obs " + path("missing.txt")),
            2);
  const std::string bad = write_text(
      "bad.txt",
      "orbit_id\ttime_s\tlat_deg\tlon_deg\tresidual_log\n1\t0\t95\t0\t0.5\n");
  EXPECT_EQ(run("loglik --model " + model + " --obs " + bad), 2);
  EXPECT_NE(err().find("error:"), std::string::npos);
  const std::string junk = write_text("junk.txt", "not a model\n");
  const std::string obs = write_file("obs.txt", [](std::ostream& f) {
    axsym::write_observations(f, demo_obs(3, 8),
                              axsym::ValueKind::kResidualLog);
  });
  EXPECT_EQ(run("loglik --model " + junk + " --obs " + obs), 2);
}

TEST_F(CliTest, LoglikStdoutMatchesLibraryValue) {
  const auto model = demo_model(11, 3, 0.2);
  const auto obs = demo_obs(12, 60);
  const std::string mp = write_file("m.txt", [&](std::ostream& f) {
    axsym::write_model(f, model);
  });
  const std::string op = write_file("o.txt", [&](std::ostream& f) {
    axsym::write_observations(f, obs, axsym::ValueKind::kResidualLog);
  });

  ASSERT_EQ(run("loglik --model " + mp + " --obs " + op), 0);
  const double lr =
      axsym::loglik_lowrank(model, std::span<const axsym::Observation>(obs));
  EXPECT_EQ(out(), fmt(lr) + "\n");

  ASSERT_EQ(run("loglik --model " + mp + " --obs " + op + " --dense"), 0);
  std::vector<axsym::GeoPoint> pts;
  Eigen::VectorXd z;
  axsym::detail::split_obs(obs, &pts, &z);
  const double dn = axsym::loglik_dense(axsym::covariance_matrix(model, pts), z);
  EXPECT_EQ(out(), fmt(dn) + "\n");

  const axsym::ExpChordalModel exp_model{1.4, 0.8, 0.05};
  const std::string ep = write_file("e.txt", [&](std::ostream& f) {
    axsym::write_model(f, exp_model);
  });
  ASSERT_EQ(run("loglik --model " + ep + " --obs " + op), 0);
  const double ev =
      axsym::loglik_dense(axsym::covariance_matrix(exp_model, pts), z);
  EXPECT_EQ(out(), fmt(ev) + "\n");
}

TEST_F(CliTest, KrigeOutputIsByteIdenticalToLibrary) {
  const auto model = demo_model(21, 2, 0.15);
  const auto obs = demo_obs(22, 50);
  const std::vector<axsym::GeoPoint> targets = {
      {-60.0, 0.0}, {-58.5, 12.5}, {-61.0, -170.0}, {-55.0, 179.5}};
  const std::string mp = write_file("m.txt", [&](std::ostream& f) {
    axsym::write_model(f, model);
  });
  const std::string op = write_file("o.txt", [&](std::ostream& f) {
    axsym::write_observations(f, obs, axsym::ValueKind::kResidualLog);
  });
  std::string tf = "lat_deg\tlon_deg\n";
  for (const auto& t : targets)
    tf += fmt(t.lat) + "\t" + fmt(t.lon) + "\n";
  const std::string tp = write_text("t.txt", tf);

  const std::string outp = path("krg.txt");
  ASSERT_EQ(run("krige --model " + mp + " --obs " + op + " --targets " + tp +
                " --out " + outp),
            0);

  const auto kr = axsym::krige_residuals(
      model, std::span<const axsym::Observation>(obs), targets);
  std::string expect = "lat_deg\tlon_deg\tprediction_log\tvar_log\n";
  for (size_t i = 0; i < targets.size(); ++i)
    expect += fmt(targets[i].lat) + "\t" + fmt(targets[i].lon) + "\t" +
              fmt(kr.predictions[i]) + "\t" + fmt(kr.variances[i]) + "\n";
  EXPECT_EQ(slurp(outp), expect);

  // "-" writes the same bytes to stdout.
  ASSERT_EQ(run("krige --model " + mp + " --obs " + op + " --targets " + tp +
                " --out -"),
            0);
  EXPECT_EQ(out(), expect);
}

TEST_F(CliTest, IngestNormalizesToTheSameBytes) {
  const std::string op = write_file("o.txt", [&](std::ostream& f) {
    axsym::write_observations(f, demo_obs(31, 40),
                              axsym::ValueKind::kResidualLog);
  });
  const std::string np = path("n.txt");
  ASSERT_EQ(run("ingest --in " + op + " --out " + np), 0);
  EXPECT_EQ(slurp(np), slurp(op));
  EXPECT_NE(err().find("40 observations"), std::string::npos);
  // stdin via "-"
  ASSERT_EQ(run("ingest --in - --out " + path("n2.txt"), "< " + op), 0);
  EXPECT_EQ(slurp(path("n2.txt")), slurp(op));
}

TEST_F(CliTest, MeanFitAndResidualsMatchLibrary) {
  // Synthetic ozone values around 300 DU so the log transform is exercised.
  std::mt19937 rng(41);
  auto obs = demo_obs(42, 120, -85.0, 85.0);
  std::uniform_real_distribution<double> du(250.0, 420.0);
  for (auto& o : obs) o.value = std::log(du(rng));
  const std::string op = write_file("o.txt", [&](std::ostream& f) {
    axsym::write_observations(f, obs, axsym::ValueKind::kOzoneDu);
  });

  const std::string meanp = path("mean.txt");
  ASSERT_EQ(run("mean-fit --obs " + op + " --out " + meanp), 0);
  const auto file = [&] {
    std::ifstream in(op);
    return axsym::read_observations(in);
  }();
  const auto fit = axsym::fit_mean(file.observations);
  EXPECT_EQ(out(), "bins " + std::to_string(fit.bin_count) + "\nr2_bins " +
                       fmt(fit.r2_bins) + "\nr2_raw " + fmt(fit.r2_raw) + "\n");

  const std::string rp = path("resid.txt");
  ASSERT_EQ(run("residuals --obs " + op + " --mean " + meanp + " --out " + rp),
            0);
  std::ifstream rin(rp);
  const auto rfile = axsym::read_observations(rin);
  ASSERT_EQ(rfile.observations.size(), file.observations.size());
  EXPECT_EQ(rfile.kind, axsym::ValueKind::kResidualLog);
  for (size_t i = 0; i < rfile.observations.size(); ++i) {
    const auto& o = file.observations[i];
    const double expect =
        o.value - axsym::mean_value_at(fit.model, o.point.lat, o.point.lon);
    EXPECT_EQ(rfile.observations[i].value, expect);
  }
}

TEST_F(CliTest, SimulateIsSeedDeterministicAndMatchesLibrary) {
  const std::string mp = write_file("m.txt", [](std::ostream& f) {
    axsym::write_model(f, demo_model(51, 2, 0.1));
  });
  const std::string flags =
      " --orbits 3 --scans-per-orbit 10 --points-per-scan 5"
      " --inclination 97.0 --half-width 10.0 --node-lon0 5.0"
      " --node-drift 24.0 --scan-period 60.0 --orbit-period 5500.0"
      " --lat-min -80 --lat-max 80";
  ASSERT_EQ(run("simulate --model " + mp + " --seed 77 --out " +
                path("a.txt") + flags),
            0);
  ASSERT_EQ(run("simulate --model " + mp + " --seed 77 --out " +
                path("b.txt") + flags),
            0);
  EXPECT_EQ(slurp(path("a.txt")), slurp(path("b.txt")));

  axsym::SwathConfig cfg;
  cfg.orbits = 3;
  cfg.scans_per_orbit = 10;
  cfg.points_per_scan = 5;
  cfg.inclination_deg = 97.0;
  cfg.half_width_deg = 10.0;
  cfg.node_lon0_deg = 5.0;
  cfg.node_drift_deg = 24.0;
  cfg.scan_period_s = 60.0;
  cfg.orbit_period_s = 5500.0;
  cfg.lat_min = -80.0;
  cfg.lat_max = 80.0;
  const auto orbits = axsym::simulate_observations(demo_model(51, 2, 0.1),
                                                   cfg, 77);
  std::ostringstream expect;
  axsym::write_observations(expect, axsym::flatten(orbits),
                            axsym::ValueKind::kResidualLog);
  EXPECT_EQ(slurp(path("a.txt")), expect.str());
}

TEST_F(CliTest, VariogramWlsFitMlePipeline) {
  const std::string mp = write_file("true.txt", [](std::ostream& f) {
    axsym::write_model(f, demo_model(61, 2, 0.05));
  });
  const std::string op = path("obs.txt");
  ASSERT_EQ(run("simulate --model " + mp + " --seed 613 --out " + op +
                " --orbits 6 --scans-per-orbit 12 --points-per-scan 8"),
            0);

  const std::string vp = path("vg.txt");
  ASSERT_EQ(run("variogram --obs " + op + " --out " + vp), 0);
  EXPECT_NE(err().find("bins"), std::string::npos);
  std::ifstream vin(vp);
  const auto records = axsym::read_variogram(vin);
  EXPECT_GT(records.size(), 10u);

  const std::string fitp = path("fit.txt");
  ASSERT_EQ(run("wls-fit --variogram " + vp + " --n 2 --out " + fitp +
                " --report " + path("report.txt") + " --emit-gamma-grid " +
                path("grid.txt")),
            0);
  std::ifstream fin(fitp);
  const auto fitted = axsym::read_harmonic_model(fin);
  EXPECT_EQ(fitted.N, 2);
  EXPECT_GT(fitted.nugget, 0.0);
  EXPECT_NE(slurp(path("report.txt")).find("wls-psd"), std::string::npos);
  std::ifstream gin(path("grid.txt"));
  EXPECT_EQ(axsym::read_variogram(gin).size(), records.size());

  ASSERT_EQ(run("loglik --model " + fitp + " --obs " + op), 0);
  const double ll = std::stod(out());
  EXPECT_TRUE(std::isfinite(ll));

  ASSERT_EQ(run("mle white --obs " + op), 0);
  EXPECT_NE(out().find("variance "), std::string::npos);
  ASSERT_EQ(run("mle harmonic --obs " + op + " --n 0 --init " + fitp), 2);
  EXPECT_NE(err().find("error:"), std::string::npos);  // init N mismatch
}

TEST_F(CliTest, Level25ThreadsAndIncludeFilter) {
  const std::string mp = write_file("m.txt", [](std::ostream& f) {
    axsym::write_model(f, demo_model(71, 2, 0.1));
  });
  // Mean model with a handful of nonzero coefficients.
  const std::string meanp = write_file("mean.txt", [](std::ostream& f) {
    axsym::MeanModel mean;
    mean.coefficients.assign(size_t(axsym::kMeanDesignCols), 0.0);
    mean.coefficients[0] = 5.6;
    mean.coefficients[1] = 0.01;
    axsym::write_mean_model(f, mean);
  });
  const std::string op = path("obs.txt");
  ASSERT_EQ(run("simulate --model " + mp + " --seed 715 --out " + op +
                " --orbits 4 --scans-per-orbit 30 --points-per-scan 10"
                " --lat-min -66 --lat-max -54"),
            0);

  ASSERT_EQ(run("level25 --obs " + op + " --model " + mp + " --mean " + meanp +
                " --out " + path("p1.txt") + " --threads 1"),
            0);
  ASSERT_EQ(run("level25 --obs " + op + " --model " + mp + " --mean " + meanp +
                " --out " + path("p4.txt") + " --threads 4"),
            0);
  EXPECT_EQ(slurp(path("p1.txt")), slurp(path("p4.txt")));

  std::ifstream pin(path("p1.txt"));
  const auto all = axsym::read_product(pin);
  ASSERT_FALSE(all.empty());

  ASSERT_EQ(run("level25 --obs " + op + " --model " + mp + " --mean " + meanp +
                " --out " + path("p2.txt") + " --include 2"),
            0);
  std::ifstream pin2(path("p2.txt"));
  const auto only2 = axsym::read_product(pin2);
  ASSERT_FALSE(only2.empty());
  for (const auto& r : only2) EXPECT_EQ(r.orbit_id, 2);
  size_t expect2 = 0;
  for (const auto& r : all) expect2 += (r.orbit_id == 2);
  EXPECT_EQ(only2.size(), expect2);
}

TEST_F(CliTest, VerifyChecksPass) {
  ASSERT_EQ(run("verify"), 0);
  const std::string table = out();
  EXPECT_NE(table.find("loglik low-rank vs dense"), std::string::npos);
  EXPECT_NE(table.find("addition theorem"), std::string::npos);
  EXPECT_EQ(table.find("FAIL"), std::string::npos);
}
