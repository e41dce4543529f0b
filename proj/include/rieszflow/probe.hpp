#pragma once
// Heat-diffusion descent probe for the Coulomb interaction energy: given mu
// and a target nu, diffuse a selected piece rho of the positive part of
// mu - nu along the heat flow, mu_t = mu + K_t * rho - rho, and read off
// d/dt E_nu(mu_t) = -c_d <rho, K_2t * rho + K_t * (mu - rho) - K_t * nu>.
// Sign of the derivative refutes criticality; its small-t power law measures
// the codimension of supp(rho).

#include "energy.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace rieszflow {

// Normalization c_d in -Laplace G = c_d * delta: 1 on the torus (spectral
// Green function, -Laplace G = delta - 1 and the Lebesgue part cancels on
// mean-zero pairings), the unit-sphere area in Euclidean space.
inline double coulomb_constant(const Domain& dom) {
  return dom.is_torus() ? 1.0 : coulomb_normalization(dom.dim);
}

namespace detail {

inline void require_coulomb(const Kernel& k) {
  const bool ok = k.family == KernelFamily::coulomb ||
                  (k.family == KernelFamily::logarithmic && !k.domain.is_torus() && k.domain.dim == 2) ||
                  (k.family == KernelFamily::riesz && !k.domain.is_torus() &&
                   k.s == double(k.domain.dim - 2));
  require(ok, Err::bad_argument, "heat-flow probe needs the Coulomb kernel");
}

// Squared distance in the domain metric (per-axis minimal image on the torus).
inline double metric_dist2(const Domain& dom, const double* x, const double* y) {
  double r2 = 0.0;
  for (int a = 0; a < dom.dim; ++a) {
    double u = x[a] - y[a];
    if (dom.is_torus()) {
      u = wrap01(u);
      if (u > 0.5) u = 1.0 - u;
    }
    r2 += u * u;
  }
  return r2;
}

}  // namespace detail

// --- probe curve ---------------------------------------------------------------

// mu_t = base + K_t * rho - rho with 0 <= rho <= positive part of base - nu.
struct ProbeCurve {
  Measure base;
  Measure rho;
  std::vector<double> t_grid;
  std::vector<double> derivative_values;
};

// Explicit lattice realization of mu_t; base and rho must share a lattice.
// Midpoint quadrature of K_t * rho keeps the discrete mass to within the
// Poisson-summation error exp(-4 pi^2 t / h^2), negligible for t >~ h^2.
inline GridMeasure probe_curve_measure(const ProbeCurve& curve, double t) {
  require(t > 0.0, Err::nonpositive_time, "probe curve needs t > 0");
  const GridMeasure* base = std::get_if<GridMeasure>(&curve.base);
  const GridMeasure* rho = std::get_if<GridMeasure>(&curve.rho);
  require(base && rho, Err::bad_argument, "explicit probe curve needs lattice carriers");
  require(base->same_lattice(*rho), Err::lattice_mismatch, "probe curve: base/rho lattices differ");
  GridMeasure out = *base;
  std::vector<double> smooth(out.cells(), 0.0);
  parallel_for(out.cells(), [&](size_t c) { smooth[c] = heat_smooth(*rho, t, out.center(c)); });
  for (size_t c = 0; c < out.cells(); ++c) {
    out.values[c] += smooth[c] - rho->values[c];
    if (out.values[c] < 0.0 && out.values[c] > -1e-13) out.values[c] = 0.0;
  }
  return out;
}

// d/dt E_nu(mu_t) by heat pairings; finite for every t > 0 even when the
// base energy itself is infinite (atomic base with a singular kernel).
inline double energy_derivative(const Kernel& k, const ProbeCurve& curve, const Measure& nu,
                                double t) {
  require(t > 0.0, Err::nonpositive_time, "energy derivative needs t > 0");
  detail::require_coulomb(k);
  require(measure_domain(curve.base) == k.domain && measure_domain(nu) == k.domain,
          Err::domain_mismatch, "energy derivative: measure/kernel domain mismatch");
  SiteList rho = sites_of(curve.rho);
  if (rho.n == 0) return 0.0;
  SiteList base = sites_of(curve.base);
  SiteList target = sites_of(nu);
  double bracket = heat_pairing(rho, rho, 2.0 * t) - heat_pairing(rho, rho, t) +
                   heat_pairing(rho, base, t) - heat_pairing(rho, target, t);
  return -coulomb_constant(k.domain) * bracket;
}

// --- descent set selection -------------------------------------------------------

namespace detail {

// Largest time up to which K_t * nu_minus(x) < (1/2) K_2t * mu_plus(x) is
// guaranteed by the Gaussian envelope alone: nu_minus is bounded by its mass
// at distance eps from x, mu_plus from below by the self term of weight w.
// On the torus the envelope holds with a factor 3.01^d for t <= 0.04.
inline double certified_small_time(double eps2, double w, double minus_mass, const Domain& dom) {
  if (eps2 <= 0.0 || w <= 0.0) return 0.0;
  const int d = dom.dim;
  double slack = dom.is_torus() ? std::pow(3.01, d) : 1.0;
  double logterm = std::log(std::pow(2.0, 0.5 * d + 1.0) * slack * minus_mass / w);
  double cap = dom.is_torus() ? 0.04 : std::numeric_limits<double>::infinity();
  if (logterm <= 0.0) return cap;
  return std::min(cap, eps2 / (4.0 * logterm));
}

}  // namespace detail

// Restriction of mu_plus to the sites x where K_t * nu_minus(x) stays below
// (1/2) K_2t * mu_plus(x) on the geometric grid {t0, t0/2, ...}; t0 itself is
// halved until the retained mass reaches half of mass(mu_plus).
inline Measure select_descent_set(const Measure& mu_plus, const Measure& nu_minus, double t0) {
  require(t0 > 0.0, Err::bad_argument, "descent set selection needs t0 > 0");
  const Domain& dom = measure_domain(mu_plus);
  require(dom == measure_domain(nu_minus), Err::domain_mismatch,
          "descent set: mu_plus/nu_minus domain mismatch");
  SiteList plus = sites_of(mu_plus);
  SiteList minus = sites_of(nu_minus);
  if (minus.n == 0 || plus.n == 0) return mu_plus;
  const int d = dom.dim;
  const double minus_mass = measure_mass(nu_minus);
  const double target_mass = 0.5 * measure_mass(mu_plus);

  std::vector<double> eps2(size_t(plus.n));
  parallel_for(size_t(plus.n), [&](size_t i) {
    const double* xi = plus.pts.data() + i * size_t(d);
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < size_t(minus.n); ++j)
      best = std::min(best, detail::metric_dist2(dom, xi, minus.pts.data() + j * size_t(d)));
    eps2[i] = best;
  });

  std::vector<char> keep(size_t(plus.n));
  for (double t_top = t0;; t_top *= 0.5) {
    require(t_top >= 1e-12, Err::no_descent_set,
            "no descent set above t = 1e-12: inputs overlap at resolution");
    parallel_for(size_t(plus.n), [&](size_t i) {
      if (eps2[i] <= 0.0) {  // coincident supports are not mutually singular
        keep[i] = 0;
        return;
      }
      Vec x(d);
      for (int a = 0; a < d; ++a) x[a] = plus.pts[i * size_t(d) + size_t(a)];
      double tsafe = detail::certified_small_time(eps2[i], plus.w[i], minus_mass, dom);
      bool ok = true;
      for (double t = t_top; t > tsafe; t *= 0.5) {
        if (!(heat_smooth(nu_minus, t, x) < 0.5 * heat_smooth(mu_plus, 2.0 * t, x))) {
          ok = false;
          break;
        }
      }
      keep[i] = ok ? 1 : 0;
    });
    double kept = 0.0;
    for (size_t i = 0; i < size_t(plus.n); ++i)
      if (keep[i]) kept += plus.w[i];
    if (kept >= target_mass - 1e-15) break;
  }

  if (const GridMeasure* g = std::get_if<GridMeasure>(&mu_plus)) {
    GridMeasure out = *g;
    size_t site = 0;
    for (size_t c = 0; c < out.cells(); ++c) {
      if (out.values[c] == 0.0) continue;  // sites_of skipped these
      if (!keep[site]) out.values[c] = 0.0;
      ++site;
    }
    return Measure(std::move(out));
  }
  const ParticleMeasure& p = std::get<ParticleMeasure>(mu_plus);
  std::vector<double> pts, w;
  for (int i = 0; i < p.size(); ++i) {
    if (!keep[size_t(i)]) continue;
    pts.insert(pts.end(), p.point_ptr(i), p.point_ptr(i) + d);
    w.push_back(p.weights[size_t(i)]);
  }
  return Measure(ParticleMeasure(p.domain, std::move(pts), std::move(w)));
}

// --- descent scan -----------------------------------------------------------------

struct NoLocalMinReport {
  ProbeCurve curve;                     // rho and the evaluated derivative values
  std::vector<double> certificate_rhs;  // -(c_d/2) <rho, K_2t * rho> per grid time
  double t_star = 0.0;   // largest grid t with certified descent at every s <= t
  double rho_mass = 0.0;
  bool infinite_base_energy = false;  // atomic base under a singular kernel
  std::string note;
};

inline NoLocalMinReport no_local_min_scan(const Kernel& k, const Measure& mu, const Measure& nu,
                                          std::vector<double> t_grid) {
  detail::require_coulomb(k);
  require(!t_grid.empty(), Err::bad_argument, "descent scan needs a nonempty time grid");
  std::sort(t_grid.begin(), t_grid.end());
  require(t_grid.front() > 0.0, Err::nonpositive_time, "descent scan times must be positive");

  NoLocalMinReport rep;
  // Atomic base against a lattice target: the decomposition lives at lattice
  // resolution, and the diffused curve needs rho <= base on a common carrier,
  // so the curve starts from the rasterized base.
  rep.curve.base = mu;
  if (const ParticleMeasure* pm = std::get_if<ParticleMeasure>(&mu))
    if (const GridMeasure* gn = std::get_if<GridMeasure>(&nu))
      rep.curve.base = Measure(rasterize(*pm, *gn));
  rep.curve.t_grid = t_grid;
  if (std::holds_alternative<ParticleMeasure>(mu) && !k.domain.is_torus() &&
      (k.s > 0.0 || k.family == KernelFamily::logarithmic)) {
    rep.infinite_base_energy = true;
    rep.note = "base energy is infinite (atomic, singular kernel); derivative stays finite for t > 0";
  }

  SignedDecomposition hj = hahn_jordan(mu, nu);
  if (hj.plus_mass() <= 1e-9) {
    rep.curve.rho = hj.plus;
    rep.curve.derivative_values.assign(t_grid.size(), 0.0);
    rep.certificate_rhs.assign(t_grid.size(), 0.0);
    rep.note = "no decomposition mass";
    return rep;
  }

  rep.curve.rho = select_descent_set(hj.plus, hj.minus, t_grid.back());
  rep.rho_mass = measure_mass(rep.curve.rho);
  SiteList rho = sites_of(rep.curve.rho);
  const double cd = coulomb_constant(k.domain);
  for (double t : t_grid) {
    rep.curve.derivative_values.push_back(energy_derivative(k, rep.curve, nu, t));
    rep.certificate_rhs.push_back(-0.5 * cd * heat_pairing(rho, rho, 2.0 * t));
  }
  for (size_t i = 0; i < t_grid.size(); ++i) {
    if (!(rep.curve.derivative_values[i] <= rep.certificate_rhs[i] &&
          rep.curve.derivative_values[i] < 0.0))
      break;
    rep.t_star = t_grid[i];
  }
  return rep;
}

// --- criticality exponent ------------------------------------------------------------

struct CriticalityReport {
  double delta_hat = 0.0;  // -2 * slope of log(-derivative) against log t
  double q_hat = 0.0;      // cross-check: local dimension of supp(mu_plus)
  double rho_mass = 0.0;
  bool near_infinite_energy = false;  // delta_hat at the integrability edge 2
  std::vector<double> t_grid;
  std::vector<double> derivative_values;
};

namespace detail {

// Median nearest-neighbor distance of a site list (capped sample size).
inline double median_spacing(const SiteList& sites) {
  const int d = sites.d;
  const size_t n = size_t(sites.n);
  if (n < 2) return 0.0;
  const size_t sample = std::min<size_t>(n, 256);
  const size_t stride = n / sample;
  std::vector<double> nn;
  for (size_t i = 0; i < n; i += stride) {
    const double* xi = sites.pts.data() + i * size_t(d);
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      best = std::min(best, metric_dist2(*sites.domain, xi, sites.pts.data() + j * size_t(d)));
    }
    nn.push_back(std::sqrt(best));
  }
  std::sort(nn.begin(), nn.end());
  return nn[nn.size() / 2];
}

// Mean local dimension over a few sites of the measure, with the heat-probe
// window [2 h^2, 200 h^2] anchored at the resolution scale h of the carrier.
template <class M>
double mean_local_dimension(const M& m, const SiteList& sites) {
  double h = median_spacing(sites);
  require(h > 0.0, Err::degenerate_fit, "dimension estimate needs at least two sites");
  double lo = 2.0 * h * h;
  if (sites.domain->is_torus()) lo = std::min(lo, 4e-4);  // keep 100*lo inside the torus scale
  std::vector<double> t_grid;
  for (int i = 0; i < 9; ++i) t_grid.push_back(lo * std::pow(100.0, i / 8.0));
  const int d = sites.d;
  const size_t n = size_t(sites.n);
  const size_t probes = std::min<size_t>(n, 8);
  const size_t stride = n / probes;
  double acc = 0.0;
  for (size_t p = 0; p < probes; ++p) {
    Vec x(d);
    for (int a = 0; a < d; ++a) x[a] = sites.pts[p * stride * size_t(d) + size_t(a)];
    acc += local_dimension_estimate(m, x, t_grid).q_hat;
  }
  return acc / double(probes);
}

inline double mean_local_dimension(const Measure& m) {
  SiteList sites = sites_of(m);
  return std::visit([&](const auto& x) { return mean_local_dimension(x, sites); }, m);
}

}  // namespace detail

// Fits -d/dt E_nu(mu_t) ~ t^{-delta/2} on the given grid; delta reads the
// codimension of supp(rho). Requires a strictly negative derivative at every
// grid point. delta >= 2 sits at the integrability edge of the Coulomb energy
// and is flagged rather than trusted.
inline CriticalityReport criticality_exponent(const Kernel& k, const Measure& mu,
                                              const Measure& nu, std::vector<double> t_grid) {
  detail::require_coulomb(k);
  require(t_grid.size() >= 4, Err::bad_argument, "exponent fit needs at least 4 times");
  std::sort(t_grid.begin(), t_grid.end());
  require(t_grid.front() > 0.0, Err::nonpositive_time, "exponent fit times must be positive");

  SignedDecomposition hj = hahn_jordan(mu, nu);
  require(hj.plus_mass() > 1e-9, Err::degenerate_fit, "exponent fit needs mu != nu");
  ProbeCurve curve;
  curve.base = mu;  // rasterized when the decomposition demoted it to a lattice
  if (const ParticleMeasure* pm = std::get_if<ParticleMeasure>(&mu))
    if (const GridMeasure* gn = std::get_if<GridMeasure>(&nu))
      curve.base = Measure(rasterize(*pm, *gn));
  curve.rho = select_descent_set(hj.plus, hj.minus, t_grid.back());

  CriticalityReport rep;
  rep.rho_mass = measure_mass(curve.rho);
  rep.t_grid = t_grid;
  std::vector<double> lt, ld;
  for (double t : t_grid) {
    double dv = energy_derivative(k, curve, nu, t);
    rep.derivative_values.push_back(dv);
    require(dv < 0.0, Err::degenerate_fit, "exponent fit needs descent on the whole grid");
    lt.push_back(std::log(t));
    ld.push_back(std::log(-dv));
  }
  rep.delta_hat = -2.0 * ols_slope(lt, ld);
  rep.q_hat = detail::mean_local_dimension(hj.plus);
  rep.near_infinite_energy = rep.delta_hat > 1.9;
  return rep;
}

// --- Lagrangian criticality -----------------------------------------------------------

struct LagrangianCriticalReport {
  double residual = 0.0;  // max |grad phi_{mu-nu}| over supp(mu) and extra samples
  double witness = 0.0;   // max |mu - nu| over interior support cells (residual < tol only)
  bool interior_nonempty = false;
  bool critical = false;
};

// Residual max_x ||grad phi|| of the Lagrangian criticality equation over the
// support of mu; when it vanishes, reports how close mu is to nu on the
// interior of the support (cells whose face neighbors all carry mass).
inline LagrangianCriticalReport lagrangian_critical_check(const Kernel& k, const GridMeasure& mu,
                                                          const GridMeasure& nu,
                                                          const std::vector<Vec>& sample_points = {},
                                                          double tol = 1e-8) {
  require(mu.same_lattice(nu), Err::lattice_mismatch, "criticality check needs one lattice");
  require(mu.domain == k.domain, Err::domain_mismatch, "criticality check: domain mismatch");
  LagrangianCriticalReport rep;
  // Lattice pair on the torus: build the spectral potential once and reuse it.
  std::optional<SpectralField> spectral;
  if (spectral_pair(Measure(mu), Measure(nu), k))
    spectral = SpectralField::build(solve_potential(k, mu, nu));
  auto field_norm = [&](const Vec& x) {
    Vec v = spectral ? spectral->gradient(x) : velocity_field(k, Measure(mu), Measure(nu), x);
    double n2 = 0.0;
    for (int a = 0; a < v.n; ++a) n2 += v[a] * v[a];
    return std::sqrt(n2);
  };
  const int d = mu.dim();
  std::vector<int> idx(static_cast<size_t>(d));
  std::vector<double> norms(mu.cells(), 0.0);
  std::vector<char> insupp(mu.cells());
  for (size_t c = 0; c < mu.cells(); ++c) insupp[c] = mu.values[c] > 0.0 ? 1 : 0;
  parallel_for(mu.cells(), [&](size_t c) {
    if (insupp[c]) norms[c] = field_norm(mu.center(c));
  });
  for (size_t c = 0; c < mu.cells(); ++c) rep.residual = std::max(rep.residual, norms[c]);
  for (const Vec& x : sample_points) rep.residual = std::max(rep.residual, field_norm(x));
  rep.critical = rep.residual < tol;

  for (size_t c = 0; c < mu.cells(); ++c) {
    if (!insupp[c]) continue;
    mu.unflatten(c, idx.data());
    bool interior = true;
    for (int a = 0; a < d && interior; ++a) {
      for (int step : {-1, 1}) {
        int saved = idx[size_t(a)];
        int nb = saved + step;
        if (mu.domain.is_torus()) {
          nb = (nb + mu.shape[size_t(a)]) % mu.shape[size_t(a)];
        } else if (nb < 0 || nb >= mu.shape[size_t(a)]) {
          interior = false;
          break;
        }
        idx[size_t(a)] = nb;
        if (!insupp[mu.flatten(idx.data())]) interior = false;
        idx[size_t(a)] = saved;
        if (!interior) break;
      }
    }
    if (!interior) continue;
    rep.interior_nonempty = true;
    if (rep.critical)
      rep.witness = std::max(rep.witness, std::abs(mu.values[c] - nu.values[c]));
  }
  return rep;
}

}  // namespace rieszflow
