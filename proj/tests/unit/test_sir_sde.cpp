#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "klpc/error.hpp"
#include "klpc/random.hpp"
#include "klpc/sir_sde.hpp"

using namespace klpc;
using namespace klpc::sir;

namespace {

ModelParams base_params(double beta = 1.0, double gamma = 0.8) {
  ModelParams p;
  p.beta = beta;
  p.gamma = gamma;
  return p;
}

// V assembled term by term from the transition rates.
Eigen::Matrix2d covariance_oracle(double s, double i, double beta, double gamma, double n) {
  const double inf = beta * s * i / n, rec = gamma * i;
  Eigen::Matrix2d v;
  v << inf, -inf, -inf, inf + rec;
  return v;
}

// Profile sampled on a uniform grid, for QOI refinement checks.
Trajectory sampled_profile(double dt, double t_end) {
  Trajectory tr;
  const auto steps = static_cast<std::size_t>(std::llround(t_end / dt));
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    tr.times.push_back(t);
    tr.i.push_back(100.0 * std::exp(-(t - 10.0) * (t - 10.0) / 8.0));
    tr.s.push_back(800.0);
  }
  return tr;
}

}  // namespace

TEST_CASE("drift examples") {
  const auto p = base_params();
  const Eigen::Vector2d a = drift({9998, 2}, p);
  CHECK(a[0] == doctest::Approx(-1.9996).epsilon(1e-12));
  CHECK(a[1] == doctest::Approx(0.3996).epsilon(1e-12));
  CHECK(drift({4000, 0}, p).isZero());
  const Eigen::Vector2d b = drift({0, 10}, p);
  CHECK(b[0] == 0.0);
  CHECK(b[1] == doctest::Approx(-8.0));
}

TEST_CASE("diffusion root examples") {
  const auto p = base_params();
  CHECK(diffusion_sqrt({5000, 0}, p).root.isZero());

  Eigen::Matrix2d diag;
  diag << 4, 0, 0, 9;
  const auto r = symmetric_sqrt(diag).root;
  CHECK(r(0, 0) == doctest::Approx(2.0));
  CHECK(r(1, 1) == doctest::Approx(3.0));
  CHECK(std::abs(r(0, 1)) < 1e-14);

  const Eigen::Matrix2d v = covariance_oracle(9998, 2, 1.0, 0.8, 10000);
  const Eigen::Matrix2d b = diffusion_sqrt({9998, 2}, p).root;
  CHECK((b * b - v).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((diffusion_covariance({9998, 2}, p) - v).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("diffusion root on random valid states") {
  Rng rng(11);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    ModelParams p;
    p.population = 10.0 + 1e5 * rng.uniform();
    p.beta = 0.01 + 5.0 * rng.uniform();
    p.gamma = 0.01 + 5.0 * rng.uniform();
    const double s = p.population * rng.uniform();
    const double i = (p.population - s) * rng.uniform();
    const Eigen::Matrix2d v = covariance_oracle(s, i, p.beta, p.gamma, p.population);
    const Eigen::Matrix2d b = diffusion_sqrt({s, i}, p).root;
    REQUIRE(b(0, 1) == b(1, 0));
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(b);
    REQUIRE(es.eigenvalues().minCoeff() >= -1e-12);
    const double err = (b * b - v).cwiseAbs().maxCoeff() / (1.0 + v.cwiseAbs().rowwise().sum().maxCoeff());
    worst = std::max(worst, err);
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("step examples") {
  const auto p = base_params();
  const State z0{5000, 0};
  const State z1 = step(z0, p, 0.01, Eigen::Vector2d::Zero());
  CHECK(z1.s == z0.s);
  CHECK(z1.i == z0.i);

  const State z{9000, 500};
  const State e = step(z, p, 0.01, Eigen::Vector2d::Zero());
  const Eigen::Vector2d a = drift(z, p);
  CHECK(e.s == doctest::Approx(z.s + 0.01 * a[0]).epsilon(1e-14));
  CHECK(e.i == doctest::Approx(z.i + 0.01 * a[1]).epsilon(1e-14));

  // With i = 2 the noise scale is ~sqrt(2 dt), so -1e3 overshoots.
  const State c = step({9998, 2}, p, 0.01, Eigen::Vector2d(0.0, -1e3));
  CHECK(c.i == 0.0);
  CHECK(c.s >= 0.0);
  CHECK(c.s + c.i <= p.population);
}

TEST_CASE("simulate with no infected is constant and stops at once") {
  auto p = base_params();
  p.i0 = 0;
  p.s0 = 9000;
  SimConfig cfg;
  cfg.seed = 1;
  Rng rng(1);
  const auto tr = simulate(p, cfg, rng);
  REQUIRE(!tr.empty());
  CHECK(tr.size() <= 2);
  for (std::size_t k = 0; k < tr.size(); ++k) {
    CHECK(tr.s[k] == 9000.0);
    CHECK(tr.i[k] == 0.0);
  }
  const auto q = extract_qoi(tr, p.population);
  CHECK(q.p_inf == 0.0);
  CHECK(q.c_inf == doctest::Approx(100.0 * (p.population - 9000.0) / p.population));
}

TEST_CASE("simulate is reproducible for a fixed seed") {
  const auto p = base_params(2.72, 2.23);
  SimConfig cfg;
  Rng a(42), b(42);
  const auto ta = simulate(p, cfg, a);
  const auto tb = simulate(p, cfg, b);
  REQUIRE(ta.size() == tb.size());
  for (std::size_t k = 0; k < ta.size(); ++k) {
    REQUIRE(ta.s[k] == tb.s[k]);
    REQUIRE(ta.i[k] == tb.i[k]);
  }
}

TEST_CASE("stochastic paths stay in the simplex") {
  const auto p = base_params(2.72, 2.23);
  SimConfig cfg;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    Rng rng = Rng::substream(7, {seed});
    const auto tr = simulate(p, cfg, rng);
    for (std::size_t k = 0; k < tr.size(); ++k) {
      REQUIRE(tr.s[k] >= 0.0);
      REQUIRE(tr.i[k] >= 0.0);
      REQUIRE(tr.s[k] + tr.i[k] <= p.population);
    }
    CHECK((tr.i.back() < cfg.extinction_threshold || tr.times.back() >= cfg.t_max - 1e-9));
  }
}

TEST_CASE("noise-free path: s non-increasing and R non-decreasing") {
  const auto p = base_params(2.72, 2.23);
  SimConfig cfg;
  cfg.noise_free = true;
  Rng rng(0);
  const auto tr = simulate(p, cfg, rng);
  const double tol = 1e-9 * p.population;
  for (std::size_t k = 1; k < tr.size(); ++k) {
    REQUIRE(tr.s[k] <= tr.s[k - 1] + tol);
    const double r0 = p.population - tr.s[k - 1] - tr.i[k - 1];
    const double r1 = p.population - tr.s[k] - tr.i[k];
    REQUIRE(r1 >= r0 - tol);
  }
}

TEST_CASE("noise-free simulation converges at first order") {
  auto p = base_params(1.0, 0.8);
  p.s0 = 9000;
  p.i0 = 1000;
  const double horizon = 20.0;
  auto at_horizon = [&](double dt) {
    SimConfig cfg;
    cfg.dt = dt;
    cfg.t_max = horizon;
    cfg.noise_free = true;
    cfg.extinction_threshold = 0.0;
    Rng rng(0);
    return simulate(p, cfg, rng).i.back();
  };
  // Reference: RK4 on a much finer grid.
  auto rk4 = [&](double h) {
    Eigen::Vector2d z(p.s0, p.i0);
    auto f = [&](const Eigen::Vector2d& y) { return drift({y[0], y[1]}, p); };
    const auto n = static_cast<int>(std::llround(horizon / h));
    for (int k = 0; k < n; ++k) {
      const Eigen::Vector2d k1 = f(z), k2 = f(z + 0.5 * h * k1), k3 = f(z + 0.5 * h * k2),
                            k4 = f(z + h * k3);
      z += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return z[1];
  };
  const double ref = rk4(1e-3);
  std::vector<double> lx, ly;
  for (double dt : {0.1, 0.05, 0.025, 0.0125}) {
    lx.push_back(std::log(dt));
    ly.push_back(std::log(std::abs(at_horizon(dt) - ref)));
  }
  const double mx = (lx[0] + lx[1] + lx[2] + lx[3]) / 4, my = (ly[0] + ly[1] + ly[2] + ly[3]) / 4;
  double sxy = 0, sxx = 0;
  for (int k = 0; k < 4; ++k) {
    sxy += (lx[k] - mx) * (ly[k] - my);
    sxx += (lx[k] - mx) * (lx[k] - mx);
  }
  const double order = sxy / sxx;
  CHECK(order >= 0.8);
  CHECK(order <= 1.2);
}

TEST_CASE("sde mean tracks the ODE when extinction is negligible") {
  // Starting from 500 infected the early stochastic phase is skipped, so the
  // ensemble mean and the mean field agree near the peak.
  auto p = base_params(1.0, 0.8);
  p.s0 = 9500;
  p.i0 = 500;
  SimConfig cfg;
  cfg.t_max = 120;
  const auto ode = simulate_ode(p, cfg.dt, cfg.t_max);
  std::size_t peak = 0;
  for (std::size_t k = 0; k < ode.size(); ++k)
    if (ode.i[k] > ode.i[peak]) peak = k;
  const int reps = 400;
  double sum = 0.0;
  for (int r = 0; r < reps; ++r) {
    Rng rng = Rng::substream(5, {static_cast<std::uint64_t>(r)});
    const auto tr = simulate(p, cfg, rng);
    sum += peak < tr.size() ? tr.i[peak] : 0.0;
  }
  CHECK(std::abs(sum / reps - ode.i[peak]) / ode.i[peak] < 0.05);
}

TEST_CASE("QOI of the triangle profile") {
  Trajectory tr;
  for (int k = 0; k <= 20; ++k) {
    tr.times.push_back(k);
    tr.i.push_back(k <= 10 ? 10.0 * k : 10.0 * (20 - k));
    tr.s.push_back(k == 20 ? 800.0 : 1000.0 - 10.0 * k);
  }
  const auto q = extract_qoi(tr, 1000.0);
  CHECK(q.p_inf == doctest::Approx(10.0));
  CHECK(q.t_p == doctest::Approx(10.0));
  CHECK(q.t_d == doctest::Approx(10.0));
  CHECK(q.c_inf == doctest::Approx(20.0));
}

TEST_CASE("QOI of a constant profile") {
  Trajectory tr;
  for (int k = 0; k <= 30; ++k) {
    tr.times.push_back(0.5 * k);
    tr.i.push_back(7.0);
    tr.s.push_back(900.0);
  }
  const auto q = extract_qoi(tr, 1000.0);
  CHECK(q.t_d == doctest::Approx(15.0));
  CHECK(q.t_p == 0.0);
}

TEST_CASE("QOI are stable under grid refinement") {
  const auto coarse = extract_qoi(sampled_profile(0.1, 30.0), 1000.0);
  const auto fine = extract_qoi(sampled_profile(0.05, 30.0), 1000.0);
  CHECK(std::abs(coarse.p_inf - fine.p_inf) < 1e-2);
  CHECK(std::abs(coarse.t_p - fine.t_p) <= 0.1);
  CHECK(std::abs(coarse.t_d - fine.t_d) <= 0.1);
  CHECK(coarse.c_inf == fine.c_inf);
  // Closed form: exp(-(t-10)^2/8) >= 1/2 on |t - 10| <= sqrt(8 ln 2).
  CHECK(fine.t_d == doctest::Approx(2.0 * std::sqrt(8.0 * std::log(2.0))).epsilon(1e-3));
}

TEST_CASE("empty trajectory is rejected") {
  CHECK_THROWS_AS(extract_qoi(Trajectory{}, 100.0), InputError);
}

TEST_CASE("parameter validation") {
  auto p = base_params();
  CHECK_NOTHROW(p.validate());
  p.beta = 0;
  CHECK_THROWS_AS(p.validate(), InputError);
  p = base_params();
  p.s0 = 10000;
  CHECK_THROWS_AS(p.validate(), InputError);
  p = base_params();
  p.i0 = 0;
  p.s0 = 100;
  CHECK_THROWS_AS(p.validate(), InputError);
  CHECK_NOTHROW(p.validate(true));
  SimConfig cfg;
  cfg.t_max = cfg.dt;
  CHECK_THROWS_AS(cfg.validate(), InputError);
}

TEST_CASE("degenerate lognormal returns the median") {
  ParamDistribution d;
  d.sigma2_beta = 1e-12;
  d.sigma2_gamma = 1e-12;
  Rng rng(3);
  for (const auto& r : sample_parameters(d, 100, rng)) {
    CHECK(r.beta == doctest::Approx(std::exp(d.mu_beta)).epsilon(1e-5));
    CHECK(r.gamma == doctest::Approx(std::exp(d.mu_gamma)).epsilon(1e-5));
  }
}

TEST_CASE("lognormal draws have the requested log moments") {
  ParamDistribution d;
  Rng rng(4);
  const std::size_t n = 20000;
  const auto draws = sample_parameters(d, n, rng);
  double mb = 0, mg = 0;
  for (const auto& r : draws) {
    mb += std::log(r.beta);
    mg += std::log(r.gamma);
  }
  mb /= n;
  mg /= n;
  const double se = std::sqrt(d.sigma2_beta / n);
  CHECK(std::abs(mb - d.mu_beta) < 4 * se);
  CHECK(std::abs(mg - d.mu_gamma) < 4 * se);

  Rng again(4);
  const auto repeat = sample_parameters(d, n, again);
  CHECK(repeat.front() == draws.front());
  CHECK(repeat.back() == draws.back());
}

TEST_CASE("natural-scale lognormal matches the requested mean") {
  ParamDistribution d;
  d.scale = LognormalScale::natural;
  d.mu_beta = 2.0;
  d.sigma2_beta = 0.04;
  d.mu_gamma = 1.5;
  d.sigma2_gamma = 0.01;
  Rng rng(8);
  const std::size_t n = 40000;
  double mb = 0;
  for (const auto& r : sample_parameters(d, n, rng)) mb += r.beta;
  mb /= n;
  CHECK(std::abs(mb - 2.0) < 4 * std::sqrt(0.04 / n));
}
