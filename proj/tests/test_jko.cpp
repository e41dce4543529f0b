#include "rieszflow/jko.hpp"

#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"

using namespace rieszflow;

namespace {

ParticleMeasure random_cloud(Rng& rng, int n, int d, double lo, double hi, bool equal_weights) {
  std::uniform_real_distribution<double> coord(lo, hi), wdist(0.2, 1.0);
  std::vector<double> pts, w;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    Vec x = oracle::rand_box(rng, d, lo, hi);
    for (int a = 0; a < d; ++a) pts.push_back(x[a]);
    double wi = equal_weights ? 1.0 : wdist(rng);
    w.push_back(wi);
    total += wi;
  }
  for (double& wi : w) wi /= total;
  return ParticleMeasure(Domain::euclidean(d), std::move(pts), std::move(w));
}

// Two interleaved clouds with a pairwise standoff, so the velocity field's
// curvature scale stays well above the smallest proximal step.
std::pair<ParticleMeasure, ParticleMeasure> standoff_clouds(Rng& rng, int n, int d, double sep) {
  std::vector<double> pts;
  int placed = 0;
  while (placed < 2 * n) {
    Vec x = oracle::rand_box(rng, d, 0.0, 1.0);
    bool ok = true;
    for (int i = 0; i < placed && ok; ++i) {
      double r2 = 0.0;
      for (int a = 0; a < d; ++a) {
        double u = x[a] - pts[size_t(i) * size_t(d) + size_t(a)];
        r2 += u * u;
      }
      ok = r2 >= sep * sep;
    }
    if (!ok) continue;
    for (int a = 0; a < d; ++a) pts.push_back(x[a]);
    ++placed;
  }
  std::vector<double> pa, pb, w(static_cast<size_t>(n), 1.0 / n);
  for (int i = 0; i < 2 * n; ++i)
    for (int a = 0; a < d; ++a)
      (i % 2 == 0 ? pa : pb).push_back(pts[size_t(i) * size_t(d) + size_t(a)]);
  return {ParticleMeasure(Domain::euclidean(d), std::move(pa), w),
          ParticleMeasure(Domain::euclidean(d), std::move(pb), w)};
}

GridMeasure cos_grid(int n, double a1, double a2 = 0.0) {
  std::vector<double> v(static_cast<size_t>(n));
  for (int c = 0; c < n; ++c) {
    double x = (c + 0.5) / n;
    v[size_t(c)] =
        1.0 + a1 * std::cos(2.0 * oracle::pi * x) + a2 * std::cos(4.0 * oracle::pi * x);
  }
  return GridMeasure::torus({n}, std::move(v));
}

}  // namespace

TEST_SUITE("jko") {
  TEST_CASE("exact transport matches the sorted matching in one dimension") {
    Rng rng(11);
    // identity: same atoms, zero cost, diagonal support
    ParticleMeasure mu = random_cloud(rng, 8, 2, 0.0, 1.0, false);
    TransportPlan self = w2_exact(mu, mu);
    CHECK(self.cost <= 1e-14);
    for (const PlanEntry& e : self.entries) CHECK(e.i == e.j);

    // two unit diracs at distance one
    ParticleMeasure d0(Domain::euclidean(1), {0.0}, {1.0});
    ParticleMeasure d1(Domain::euclidean(1), {1.0}, {1.0});
    CHECK(w2_exact(d0, d1).cost == doctest::Approx(1.0).epsilon(1e-12));

    // equal-weight clouds on the line: the optimum is the sorted matching
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> xs, ys;
    for (int i = 0; i < 33; ++i) xs.push_back(u(rng)), ys.push_back(u(rng));
    std::vector<double> w(33, 1.0 / 33.0);
    ParticleMeasure a(Domain::euclidean(1), xs, w), b(Domain::euclidean(1), ys, w);
    double oracle_cost = oracle::w2_squared_sorted(xs, ys);
    CHECK(w2_exact(a, b).cost == doctest::Approx(oracle_cost).epsilon(1e-9));

    ParticleMeasure heavy(Domain::euclidean(1), {0.0}, {2.0});
    CHECK_THROWS_AS(w2_exact(heavy, d1), Error);
    std::vector<double> big_pts(2001, 0.0), big_w(2001, 1.0 / 2001.0);
    for (int i = 0; i < 2001; ++i) big_pts[size_t(i)] = i * 1e-3;
    ParticleMeasure big(Domain::euclidean(1), big_pts, big_w);
    CHECK_THROWS_AS(w2_exact(big, big), Error);
  }

  TEST_CASE("exact transport is a metric and respects torus geometry") {
    Rng rng(23);
    for (int rep = 0; rep < 10; ++rep) {
      ParticleMeasure a = random_cloud(rng, 7, 2, 0.0, 1.0, false);
      ParticleMeasure b = random_cloud(rng, 9, 2, 0.0, 1.0, false);
      double ab = w2_exact(a, b).cost, ba = w2_exact(b, a).cost;
      CHECK(std::abs(ab - ba) <= 1e-9 * (1.0 + ab));
    }
    for (int rep = 0; rep < 50; ++rep) {
      ParticleMeasure a = random_cloud(rng, 6, 2, 0.0, 1.0, false);
      ParticleMeasure b = random_cloud(rng, 6, 2, 0.0, 1.0, false);
      ParticleMeasure c = random_cloud(rng, 6, 2, 0.0, 1.0, false);
      double ab = std::sqrt(w2_exact(a, b).cost);
      double bc = std::sqrt(w2_exact(b, c).cost);
      double ac = std::sqrt(w2_exact(a, c).cost);
      CHECK(ac <= ab + bc + 1e-9);
    }
    // atoms at 0.1 and 0.9 are 0.2 apart across the seam
    ParticleMeasure ta(Domain::torus(1), {0.1}, {1.0});
    ParticleMeasure tb(Domain::torus(1), {0.9}, {1.0});
    CHECK(w2_exact(ta, tb).cost == doctest::Approx(0.04).epsilon(1e-12));
  }

  TEST_CASE("entropic transport approaches the exact cost") {
    Rng rng(37);
    ParticleMeasure mu = random_cloud(rng, 24, 2, 0.0, 1.0, false);
    CHECK(w2_entropic(mu, mu, 1e-3).cost <= 1e-4);
    CHECK_THROWS_AS(w2_entropic(mu, mu, 0.0), Error);

    ParticleMeasure d0(Domain::euclidean(1), {0.0}, {1.0});
    ParticleMeasure d1(Domain::euclidean(1), {1.0}, {1.0});
    for (double eps : {1e-1, 1e-2, 1e-3})
      CHECK(w2_entropic(d0, d1, eps).cost == doctest::Approx(1.0).epsilon(1e-9));

    ParticleMeasure a = random_cloud(rng, 64, 3, 0.0, 1.0, true);
    ParticleMeasure b = random_cloud(rng, 64, 3, 0.0, 1.0, true);
    double exact = w2_exact(a, b).cost;
    for (double eps : {0.05, 0.02}) {
      TransportPlan plan = w2_entropic(a, b, eps);
      CHECK(std::abs(plan.cost - exact) <= 5.0 * eps * std::log(64.0));
      CHECK(plan.cost >= exact - 1e-9);  // rounded plans are feasible
      // rounded marginals are exact
      std::vector<double> row(64, 0.0), col(64, 0.0);
      for (const PlanEntry& e : plan.entries) {
        row[size_t(e.i)] += e.mass;
        col[size_t(e.j)] += e.mass;
      }
      for (int i = 0; i < 64; ++i) {
        CHECK(std::abs(row[size_t(i)] - a.weights[size_t(i)]) <= 1e-9);
        CHECK(std::abs(col[size_t(i)] - b.weights[size_t(i)]) <= 1e-9);
      }
    }
  }

  TEST_CASE("proximal step solves the single atom oracle and never increases the objective") {
    Kernel k1 = Kernel::energy_distance(1);
    ParticleMeasure mu(Domain::euclidean(1), {1.0}, {1.0});
    ParticleMeasure nu(Domain::euclidean(1), {0.0}, {1.0});
    JkoResult r = jko_step(k1, mu, Measure(nu), 0.1, ProxSolver::exact);
    // prox target |y| + (y-1)^2 / 0.2 has the closed-form minimizer y = 0.9
    CHECK(r.measure.points[0] == doctest::Approx(0.9).epsilon(1e-10));
    CHECK(r.proximal_value == doctest::Approx(0.95).epsilon(1e-10));
    CHECK(!r.stationary);
    double best_y = 0.0, best_val = 1e30;
    for (int i = 0; i <= 4000; ++i) {
      double y = 2.0 * i / 4000.0;
      double val = std::abs(y) + (y - 1.0) * (y - 1.0) / 0.2;
      if (val < best_val) best_val = val, best_y = y;
    }
    CHECK(std::abs(r.measure.points[0] - best_y) <= 1e-3);

    // a cloud sitting on its target is a fixed point
    Rng rng(5);
    Kernel k2 = Kernel::energy_distance(2);
    ParticleMeasure same = random_cloud(rng, 5, 2, 0.0, 1.0, false);
    JkoResult fixed = jko_step(k2, same, Measure(same), 0.05, ProxSolver::exact);
    CHECK(fixed.stationary);
    CHECK(fixed.iterations == 0);
    CHECK(fixed.w2_sq == 0.0);
    for (size_t q = 0; q < same.points.size(); ++q)
      CHECK(fixed.measure.points[q] == same.points[q]);

    // monotonicity of the proximal objective, and strict energy decrease
    ParticleMeasure from = random_cloud(rng, 16, 2, 0.0, 1.0, false);
    ParticleMeasure to = random_cloud(rng, 16, 2, 0.0, 1.0, false);
    double e0 = mmd_energy(k2, Measure(from), Measure(to), DiagonalPolicy::exclude);
    JkoResult step = jko_step(k2, from, Measure(to), 0.05, ProxSolver::exact);
    CHECK(step.proximal_value <= e0 + 1e-10);
    CHECK(step.proximal_value < e0);
    CHECK(step.energy < e0);

    std::vector<JkoResult> chain = run_jko(k2, from, Measure(to), 0.05, 5, ProxSolver::exact);
    CHECK(chain.size() == 5);
    double prev = e0;
    for (const JkoResult& s : chain) {
      CHECK(s.proximal_value <= prev + 1e-10);
      CHECK(s.energy <= prev + 1e-10);
      prev = s.energy;
    }

    // entropic solver: same descent within the blur of the regularized plan
    JkoResult ent = jko_step(k2, from, Measure(to), 0.05, ProxSolver::entropic, 5e-3);
    CHECK(std::isfinite(ent.proximal_value));
    CHECK(ent.energy <= e0 + 1e-3);

    CHECK_THROWS_AS(jko_step(k2, from, Measure(to), 0.0, ProxSolver::exact), Error);
    ParticleMeasure empty(Domain::euclidean(2), {}, {});
    CHECK_THROWS_AS(jko_step(k2, empty, Measure(to), 0.1, ProxSolver::exact), Error);
  }

  TEST_CASE("proximal displacement matches the flow velocity as tau shrinks") {
    Rng rng(41);
    Kernel k = Kernel::coulomb(3);
    auto [mu, nu] = standoff_clouds(rng, 64, 3, 0.12);
    const std::vector<double> ones(64, 1.0);
    std::vector<double> v = lagrangian_rhs(k, flow_from_particles(mu, ones), Measure(nu));
    double vnorm2 = 0.0;
    for (size_t q = 0; q < v.size(); ++q) vnorm2 += v[q] * v[q] / 64.0;
    REQUIRE(vnorm2 > 0.0);
    std::vector<double> rel;
    for (double tau : {1e-1, 1e-2, 1e-3, 1e-4}) {
      JkoResult r = jko_step(k, mu, Measure(nu), tau, ProxSolver::exact);
      REQUIRE(!r.stationary);
      double err2 = 0.0;
      for (size_t q = 0; q < v.size(); ++q) {
        double rate = (r.measure.points[q] - mu.points[q]) / tau;
        err2 += (rate - v[q]) * (rate - v[q]) / 64.0;
      }
      rel.push_back(std::sqrt(err2 / vnorm2));
    }
    CHECK(rel.back() <= 0.1);
    CHECK(rel.back() <= rel.front() + 0.01);
  }

  TEST_CASE("probe curve is half Holder in transport distance") {
    Kernel k = Kernel::torus_coulomb(1);
    GridMeasure mu = cos_grid(256, 0.5), nu = cos_grid(256, 0.0);
    SignedDecomposition hj = hahn_jordan(Measure(mu), Measure(nu));
    ProbeCurve curve;
    curve.base = Measure(mu);
    curve.rho = select_descent_set(hj.plus, hj.minus, 1.6e-2);
    double m_rho = measure_mass(curve.rho);
    REQUIRE(m_rho > 0.05);

    // W2(mu_t, mu_s)^2 <= 2 d |t-s| mass(rho) by the Gaussian coupling; the
    // factor-2 slack absorbs the lattice quantization (h = 1/256), and the
    // 16x span of probe times would push a wrong Holder exponent far past it
    std::vector<double> times{0.0, 1e-3, 4e-3, 1.6e-2};
    std::vector<ParticleMeasure> atoms;
    for (double t : times) {
      GridMeasure g = t == 0.0 ? mu : probe_curve_measure(curve, t);
      SiteList s = sites_of(g);
      atoms.emplace_back(g.domain, s.pts, s.w);
    }
    for (size_t i = 0; i < times.size(); ++i)
      for (size_t j = i + 1; j < times.size(); ++j) {
        double cost = w2_exact(atoms[i], atoms[j]).cost;
        double bound = 2.0 * 1.0 * (times[j] - times[i]) * m_rho;
        CHECK(cost > 0.0);
        CHECK(cost <= 2.0 * bound);
      }
  }

  TEST_CASE("stationarity probe separates smooth descent from singular support") {
    std::vector<double> taus{1e-4, 1e-3, 1e-2, 1e-1};

    // identical measures carry no decomposition mass
    Kernel kt = Kernel::torus_coulomb(1);
    GridMeasure flat = cos_grid(128, 0.3);
    StationarityReport same = stationarity_probe(kt, Measure(flat), Measure(flat), taus);
    for (double dv : same.delta) CHECK(dv == 0.0);
    CHECK(same.note == "no decomposition mass");

    // density vs density: tau-linear transport descent with the analytic
    // constant |v|^2 = (a / 2 pi)^2 / 2 for mu = 1 + a cos(2 pi x), nu = 1
    StationarityReport smooth =
        stationarity_probe(kt, Measure(flat), Measure(cos_grid(128, 0.0)), taus);
    CHECK(smooth.smooth_regime);
    CHECK(smooth.fitted_exponent == doctest::Approx(1.0).epsilon(1e-9));
    double vn2 = 0.5 * std::pow(0.3 / (2.0 * oracle::pi), 2);
    for (size_t i = 0; i < taus.size(); ++i) {
      CHECK(smooth.delta[i] < 0.0);
      CHECK(smooth.delta[i] / taus[i] == doctest::Approx(-0.5 * vn2).epsilon(0.02));
    }

    // sphere vs far shell: codimension-one descent with exponent near one
    Kernel k3 = Kernel::coulomb(3);
    std::vector<double> sphere_pts = oracle::fibonacci_sphere(4000, 0.1);
    std::vector<double> wm(4000, 1.0 / 4000.0);
    ParticleMeasure sphere(Domain::euclidean(3), sphere_pts, wm);
    Rng rng(4242);
    std::uniform_real_distribution<double> rad(0.3, 0.4);
    std::vector<double> shell_pts;
    for (int i = 0; i < 4000; ++i) {
      Vec x = oracle::rand_sphere3(rng, rad(rng));
      for (int a = 0; a < 3; ++a) shell_pts.push_back(x[a]);
    }
    ParticleMeasure shell(Domain::euclidean(3), shell_pts, wm);
    std::vector<double> staus{1e-4, 3.16e-4, 1e-3, 3.16e-3, 1e-2};
    StationarityReport sing =
        stationarity_probe(k3, Measure(sphere), Measure(shell), staus);
    CHECK(!sing.smooth_regime);
    CHECK(sing.rho_mass >= 0.999);
    CHECK(sing.q_hat == doctest::Approx(2.0).epsilon(0.15));
    CHECK(sing.law_slope == doctest::Approx(-0.5).epsilon(0.3));
    for (double dv : sing.delta) CHECK(dv < 0.0);
    CHECK(sing.fitted_exponent == doctest::Approx(1.0).epsilon(0.3));

    CHECK_THROWS_AS(stationarity_probe(kt, Measure(flat), Measure(flat), {1e-3, 1e-2, 1e-1}),
                    Error);
    CHECK_THROWS_AS(stationarity_probe(kt, Measure(flat), Measure(flat), {1e-3, 2e-3, 4e-3, 8e-3}),
                    Error);
    CHECK_THROWS_AS(stationarity_probe(Kernel::energy_distance(3), Measure(sphere), Measure(shell),
                                       staus),
                    Error);
  }
}
