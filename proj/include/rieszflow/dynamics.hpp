#pragma once
// Lagrangian particle flow with logistic density/Jacobian transport, the
// semi-Lagrangian Eulerian torus scheme, and the regularity monitors.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "energy.hpp"

namespace rieszflow {

// Particle description of mu_t: labels alpha_i are fixed, positions follow
// psi_t, densities carry f_i = mu_t(psi_t(alpha_i)), jacobians J_i track
// det(d psi_t); J_i * f_i must stay equal to the initial density mu_0(alpha_i).
struct FlowState {
  Domain domain = Domain::euclidean(1);
  std::vector<double> labels;           // n x d, row-major, fixed
  std::vector<double> positions;        // n x d, psi_t(alpha_i)
  std::vector<double> densities;        // n, f_i > 0
  std::vector<double> jacobians;        // n, J_i > 0
  std::vector<double> initial_weights;  // n, mu_0(alpha_i) * quadrature volume
  double time = 0.0;

  int dim() const { return domain.dim; }
  int size() const { return static_cast<int>(densities.size()); }
  Vec position(int i) const {
    Vec p(dim());
    for (int a = 0; a < dim(); ++a) p[a] = positions[size_t(i) * size_t(dim()) + size_t(a)];
    return p;
  }
  Vec label(int i) const {
    Vec p(dim());
    for (int a = 0; a < dim(); ++a) p[a] = labels[size_t(i) * size_t(dim()) + size_t(a)];
    return p;
  }
  const double* position_ptr(int i) const { return positions.data() + size_t(i) * size_t(dim()); }

  ParticleMeasure as_particles() const {
    return ParticleMeasure(domain, positions, initial_weights);
  }
};

// Seeds particles at the cell centers of a density grid; f_i are the exact
// cell values and the weights their midpoint-quadrature masses.
inline FlowState flow_from_grid(const GridMeasure& mu0) {
  FlowState s;
  s.domain = mu0.domain;
  const int d = mu0.dim();
  for (size_t c = 0; c < mu0.cells(); ++c) {
    double f = mu0.values[c];
    require(f > 0.0, Err::zero_density_cell, "flow seeding needs a strictly positive density");
    Vec x = mu0.center(c);
    for (int a = 0; a < d; ++a) s.labels.push_back(x[a]);
    s.densities.push_back(f);
    s.initial_weights.push_back(f * mu0.cell_volume);
    s.jacobians.push_back(1.0);
  }
  s.positions = s.labels;
  return s;
}

inline FlowState flow_from_particles(const ParticleMeasure& mu0, std::vector<double> densities) {
  require(size_t(mu0.size()) == densities.size(), Err::bad_argument,
          "one density sample per particle");
  for (double f : densities)
    require(f > 0.0, Err::zero_density_cell, "flow seeding needs strictly positive densities");
  FlowState s;
  s.domain = mu0.domain;
  s.labels = mu0.points;
  s.positions = mu0.points;
  s.densities = std::move(densities);
  s.initial_weights = mu0.weights;
  s.jacobians.assign(size_t(mu0.size()), 1.0);
  return s;
}

// Periodic (torus) or clamped (euclidean) multilinear interpolation of cell
// values; the sample points sit at cell centers.
inline double grid_interp(const GridMeasure& g, const Vec& x) {
  const int d = g.dim();
  int base[max_dim];
  double theta[max_dim];
  for (int a = 0; a < d; ++a) {
    double rel = (x[a] - g.origin[size_t(a)]) / g.spacing[size_t(a)] - 0.5;
    double fl = std::floor(rel);
    base[a] = static_cast<int>(fl);
    theta[a] = rel - fl;
  }
  double acc = 0.0;
  for (int corner = 0; corner < (1 << d); ++corner) {
    double w = 1.0;
    int idx[max_dim];
    for (int a = 0; a < d; ++a) {
      int bit = (corner >> a) & 1;
      w *= bit ? theta[a] : 1.0 - theta[a];
      int j = base[a] + bit;
      int n = g.shape[size_t(a)];
      if (g.domain.is_torus())
        j = ((j % n) + n) % n;
      else
        j = std::clamp(j, 0, n - 1);
      idx[a] = j;
    }
    acc += w * g.values[g.flatten(idx)];
  }
  return acc;
}

// nu evaluated as a density. Atomic measures have no Lebesgue density, so a
// particle target contributes 0 to the logistic reaction.
inline double density_at(const Measure& nu, const Vec& x) {
  if (const auto* g = std::get_if<GridMeasure>(&nu)) return grid_interp(*g, x);
  return 0.0;
}

namespace detail {

// Gradient of the kernel for flow sums: principal value 0 across the diagonal
// where the kernel is regular, sentinel false where it is singular.
inline bool flow_grad(const Kernel& k, const double* x, const double* y, Vec& out) {
  const int d = k.dim();
  out = Vec(d);
  if (k.domain.is_torus()) {
    std::array<double, max_dim> w{};
    bool coincident = true;
    for (int a = 0; a < d; ++a) {
      w[size_t(a)] = wrap01(x[a] - y[a]);
      if (w[size_t(a)] != 0.0) coincident = false;
    }
    if (coincident) return true;  // odd sums have principal value zero
    if (d == 1) {
      out[0] = torus_green_1d_deriv(w[0]);
      return true;
    }
    out = torus_green_sum_grad(k.domain, w.data(), k.fourier_truncation);
    return true;
  }
  double r2 = 0.0;
  for (int a = 0; a < d; ++a) {
    double u = x[a] - y[a];
    out[a] = u;
    r2 += u * u;
  }
  if (r2 == 0.0) {
    bool singular = k.family == KernelFamily::logarithmic || k.s > 0.0;
    if (singular) return false;
    out = Vec(d);
    return true;
  }
  double s_eff = (k.family == KernelFamily::logarithmic) ? 0.0 : k.s;
  // Hot path of the O(n^2) sums: avoid pow for the common exponents.
  double w;
  if (s_eff == -1.0)
    w = -1.0 / std::sqrt(r2);
  else if (s_eff == 0.0)
    w = -1.0 / r2;
  else if (s_eff == 1.0)
    w = -1.0 / (r2 * std::sqrt(r2));
  else
    w = -std::pow(r2, -0.5 * (s_eff + 2.0));
  out *= w;
  return true;
}

}  // namespace detail

// Discrete target force field int gradG(x - y) dnu(y). Particle targets are
// summed exactly. Grid targets are sampled at their own cell centers (the
// midpoint quadrature, with the principal-value zero on the diagonal) and
// extended off-lattice by multilinear interpolation: the sampled values keep
// a state seeded at the centers exactly stationary, while the continuous
// interpolant prevents the raw quadrature's sawtooth jumps from turning every
// lattice site into a point attractor that pinches particle pairs together.
struct TargetField {
  bool grid = false;
  SiteList atoms;             // quadrature sites (also the Euclidean far-field fallback)
  GridMeasure lattice;        // geometry of the grid target
  std::vector<double> nodal;  // cells x d sampled force table
};

inline TargetField make_target_field(const Kernel& k, const Measure& nu) {
  require(measure_domain(nu) == k.domain, Err::domain_mismatch, "target domain differs from kernel");
  TargetField tf;
  tf.atoms = sites_of(nu);
  const auto* g = std::get_if<GridMeasure>(&nu);
  if (!g) return tf;
  tf.grid = true;
  tf.lattice = *g;
  const int d = k.dim();
  tf.nodal.assign(g->cells() * size_t(d), 0.0);
  parallel_for(g->cells(), [&](size_t c) {
    Vec x = g->center(c), grad(d), acc(d);
    for (int j = 0; j < tf.atoms.n; ++j) {
      // Coincident singular contribution: the exact integral of the odd
      // gradient over the centered cell vanishes, so the term drops.
      if (!detail::flow_grad(k, x.v.data(), tf.atoms.pts.data() + size_t(j) * size_t(d), grad))
        continue;
      for (int a = 0; a < d; ++a) acc[a] += tf.atoms.w[size_t(j)] * grad[a];
    }
    for (int a = 0; a < d; ++a) tf.nodal[c * size_t(d) + size_t(a)] = acc[a];
  });
  return tf;
}

namespace detail {

inline bool inside_grid_box(const GridMeasure& g, const double* x) {
  for (int a = 0; a < g.dim(); ++a) {
    double lo = g.origin[size_t(a)];
    double hi = lo + g.shape[size_t(a)] * g.spacing[size_t(a)];
    if (x[a] < lo || x[a] > hi) return false;
  }
  return true;
}

}  // namespace detail

// Field evaluation at an arbitrary point. Singular coincidences with target
// atoms contribute zero here; the rhs loop below decides when they abort.
inline Vec target_velocity(const Kernel& k, const TargetField& tf, const double* x) {
  const int d = k.dim();
  if (tf.grid && (k.domain.is_torus() || detail::inside_grid_box(tf.lattice, x))) {
    const GridMeasure& g = tf.lattice;
    Vec out(d);
    int base[max_dim];
    double theta[max_dim];
    for (int a = 0; a < d; ++a) {
      double rel = (x[a] - g.origin[size_t(a)]) / g.spacing[size_t(a)] - 0.5;
      double fl = std::floor(rel);
      base[a] = static_cast<int>(fl);
      theta[a] = rel - fl;
    }
    for (int corner = 0; corner < (1 << d); ++corner) {
      double w = 1.0;
      int idx[max_dim];
      for (int a = 0; a < d; ++a) {
        int bit = (corner >> a) & 1;
        w *= bit ? theta[a] : 1.0 - theta[a];
        int j = base[a] + bit;
        int n = g.shape[size_t(a)];
        if (g.domain.is_torus())
          j = ((j % n) + n) % n;
        else
          j = std::clamp(j, 0, n - 1);
        idx[a] = j;
      }
      size_t flat = g.flatten(idx);
      for (int a = 0; a < d; ++a) out[a] += w * tf.nodal[flat * size_t(d) + size_t(a)];
    }
    return out;
  }
  Vec acc(d), grad(d);
  for (int j = 0; j < tf.atoms.n; ++j) {
    if (!detail::flow_grad(k, x, tf.atoms.pts.data() + size_t(j) * size_t(d), grad)) continue;
    for (int a = 0; a < d; ++a) acc[a] += tf.atoms.w[size_t(j)] * grad[a];
  }
  return acc;
}

namespace detail {

// d psi/dt(alpha_i) = -sum_{j != i} gradG(psi_i - psi_j) w_j + target field.
inline std::vector<double> rhs_with_field(const Kernel& k, const FlowState& s,
                                          const TargetField& tf) {
  require(s.domain == k.domain, Err::domain_mismatch, "flow state domain differs from kernel");
  const int n = s.size(), d = s.dim();
  const double collision2 = 1e-24;
  const bool singular =
      k.family == KernelFamily::logarithmic || (!k.domain.is_torus() && k.s > 0.0);

  std::vector<double> out(size_t(n) * size_t(d), 0.0);
  std::vector<char> collided(size_t(n), 0);
  parallel_for(size_t(n), [&](size_t i) {
    const double* xi = s.position_ptr(int(i));
    Vec acc(d), g(d);
    for (int j = 0; j < n; ++j) {
      if (size_t(j) == i) continue;
      const double* xj = s.position_ptr(j);
      if (dist2(s.domain, xi, xj) < collision2) {
        collided[i] = 1;
        return;
      }
      if (!flow_grad(k, xi, xj, g)) {
        collided[i] = 1;
        return;
      }
      double w = s.initial_weights[size_t(j)];
      for (int a = 0; a < d; ++a) acc[a] -= w * g[a];
    }
    if (!tf.grid && singular) {
      for (int j = 0; j < tf.atoms.n; ++j)
        if (dist2(s.domain, xi, tf.atoms.pts.data() + size_t(j) * size_t(d)) < collision2) {
          collided[i] = 1;
          return;
        }
    }
    Vec field = target_velocity(k, tf, xi);
    for (int a = 0; a < d; ++a) out[i * size_t(d) + size_t(a)] = acc[a] + field[a];
  });
  for (int i = 0; i < n; ++i)
    require(!collided[size_t(i)], Err::particle_collision,
            "particles closer than 1e-12 at index " + std::to_string(i));
  return out;
}

// Velocity of the flow at an arbitrary probe point (used by the monitors).
inline Vec flow_velocity_at(const Kernel& k, const FlowState& s, const TargetField& tf,
                            const Vec& x) {
  const int d = s.dim();
  Vec acc = target_velocity(k, tf, x.v.data());
  Vec g(d);
  for (int j = 0; j < s.size(); ++j) {
    if (!flow_grad(k, x.v.data(), s.position_ptr(j), g)) continue;
    for (int a = 0; a < d; ++a) acc[a] -= s.initial_weights[size_t(j)] * g[a];
  }
  return acc;
}

// Difference-quotient estimate of |dv| from already-computed particle
// velocities; feeds the CFL guard without extra kernel sums. Also reports the
// maximizing pair so a guard failure can be classified.
struct LipschitzEstimate {
  double quotient = 0.0;
  int i = -1, j = -1;
};

inline LipschitzEstimate velocity_lipschitz_quotient(const FlowState& s,
                                                     const std::vector<double>& v) {
  const int n = s.size(), d = s.dim();
  LipschitzEstimate best;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double dx2 = dist2(s.domain, s.position_ptr(i), s.position_ptr(j));
      if (dx2 < 1e-24) continue;
      double dv2 = 0.0;
      for (int a = 0; a < d; ++a) {
        double u = v[size_t(i) * size_t(d) + size_t(a)] - v[size_t(j) * size_t(d) + size_t(a)];
        dv2 += u * u;
      }
      double q = std::sqrt(dv2 / dx2);
      if (q > best.quotient) {
        best.quotient = q;
        best.i = i;
        best.j = j;
      }
    }
  return best;
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

inline std::vector<double> lagrangian_rhs(const Kernel& k, const FlowState& s, const Measure& nu) {
  return detail::rhs_with_field(k, s, make_target_field(k, nu));
}

namespace detail {

inline FlowState step_with_field(const FlowState& s, const Kernel& k, const Measure& nu,
                                 const TargetField& tf, double dt) {
  require(dt != 0.0, Err::bad_argument, "time step must be nonzero");
  const int n = s.size(), d = s.dim();

  struct Stage {
    std::vector<double> dpos, df, dj;
  };
  auto eval = [&](const FlowState& st) -> Stage {
    Stage r;
    try {
      r.dpos = rhs_with_field(k, st, tf);
    } catch (const Error& e) {
      if (e.code == Err::particle_collision)
        throw Error(Err::collision_detected, "collision during step at t=" + std::to_string(st.time));
      throw;
    }
    r.df.resize(size_t(n));
    r.dj.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
      double c = density_at(nu, st.position(i));
      double f = st.densities[size_t(i)], J = st.jacobians[size_t(i)];
      r.df[size_t(i)] = f * (c - f);
      r.dj[size_t(i)] = J * (f - c);
    }
    return r;
  };
  auto advance = [&](const FlowState& st, const Stage& g, double h) -> FlowState {
    FlowState r = st;
    for (size_t i = 0; i < st.positions.size(); ++i) r.positions[i] += h * g.dpos[i];
    for (size_t i = 0; i < size_t(n); ++i) {
      r.densities[i] += h * g.df[i];
      r.jacobians[i] += h * g.dj[i];
    }
    if (st.domain.is_torus())
      for (double& c : r.positions) c = wrap01(c);
    r.time = st.time + h;
    return r;
  };

  Stage k1 = eval(s);
  LipschitzEstimate lip = velocity_lipschitz_quotient(s, k1.dpos);
  if (std::abs(dt) * lip.quotient > 0.5 + 1e-12) {
    // Classify the guard failure: a maximizing pair on a closing course with
    // contact only a few steps away is a collision, not a configuration error.
    double closing = 0.0, dx2 = 0.0;
    for (int a = 0; a < d; ++a) {
      double dx = k.domain.is_torus() ? torus_diff(s.positions[size_t(lip.i) * size_t(d) + size_t(a)],
                                                   s.positions[size_t(lip.j) * size_t(d) + size_t(a)])
                                      : s.positions[size_t(lip.i) * size_t(d) + size_t(a)] -
                                            s.positions[size_t(lip.j) * size_t(d) + size_t(a)];
      double dv = k1.dpos[size_t(lip.i) * size_t(d) + size_t(a)] -
                  k1.dpos[size_t(lip.j) * size_t(d) + size_t(a)];
      closing -= dv * dx;
      dx2 += dx * dx;
    }
    double dist = std::sqrt(dx2);
    double speed = closing / std::max(dist, 1e-300);  // > 0 means approaching
    if (speed > 0.0 && dist <= 16.0 * std::abs(dt) * speed)
      throw Error(Err::collision_detected,
                  "particles on a collision course at t=" + std::to_string(s.time));
    throw Error(Err::validation_error, "time step violates dt * sup|dv| <= 1/2");
  }
  Stage k2 = eval(advance(s, k1, 0.5 * dt));
  Stage k3 = eval(advance(s, k2, 0.5 * dt));
  Stage k4 = eval(advance(s, k3, dt));

  FlowState out = s;
  out.time = s.time + dt;
  for (size_t i = 0; i < s.positions.size(); ++i)
    out.positions[i] +=
        dt / 6.0 * (k1.dpos[i] + 2.0 * k2.dpos[i] + 2.0 * k3.dpos[i] + k4.dpos[i]);
  for (size_t i = 0; i < size_t(n); ++i) {
    out.densities[i] += dt / 6.0 * (k1.df[i] + 2.0 * k2.df[i] + 2.0 * k3.df[i] + k4.df[i]);
    out.jacobians[i] += dt / 6.0 * (k1.dj[i] + 2.0 * k2.dj[i] + 2.0 * k3.dj[i] + k4.dj[i]);
  }
  if (out.domain.is_torus())
    for (double& c : out.positions) c = wrap01(c);

  require(all_finite(out.positions) && all_finite(out.densities) && all_finite(out.jacobians),
          Err::blowup_detected, "nonfinite state after step");
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      require(dist2(out.domain, out.position_ptr(i), out.position_ptr(j)) >= 1e-24,
              Err::collision_detected, "particles merged during step");
  return out;
}

}  // namespace detail

// One explicit RK4 step of the coupled system
//   d psi/dt = v(psi),  df/dt = f (nu(psi) - f),  dJ/dt = J (f - nu(psi)).
// The product J*f is a first integral; drift measures integrator error.
// dt may be negative: a backward step undoes a forward one to O(dt^5).
inline FlowState step(const FlowState& s, const Kernel& k, const Measure& nu, double dt) {
  return detail::step_with_field(s, k, nu, make_target_field(k, nu), dt);
}

// Difference-quotient estimates of the norms the global-existence argument
// tracks. All quantities are diagnostics, not certified bounds.
struct RegularityMonitor {
  double sup_v = 0.0;        // max_i |v(psi_i)|
  double sup_dv = 0.0;       // stencil estimate of |dv|_inf
  double holder_dv = 0.0;    // Holder quotient of the dv estimates
  double sup_dpsi = 0.0;     // label-pair stretch estimate of |d psi|_inf
  double holder_dpsi = 0.0;  // Holder quotient of the stretch field
  double holder_mu = 0.0;    // Holder quotient of the transported density
  double support_radius = 0.0;
  double gamma = 0.5;
};

inline RegularityMonitor monitor_state(const Kernel& k, const FlowState& s, const Measure& nu,
                                       double gamma, const std::vector<double>* velocities = nullptr) {
  const int n = s.size(), d = s.dim();
  RegularityMonitor mon;
  mon.gamma = gamma;
  TargetField tf = make_target_field(k, nu);

  std::vector<double> v;
  if (velocities)
    v = *velocities;
  else
    v = detail::rhs_with_field(k, s, tf);
  for (int i = 0; i < n; ++i) {
    double v2 = 0.0;
    for (int a = 0; a < d; ++a) v2 += v[size_t(i) * size_t(d) + size_t(a)] *
                                      v[size_t(i) * size_t(d) + size_t(a)];
    mon.sup_v = std::max(mon.sup_v, std::sqrt(v2));
  }

  // Probe stencil width: half the min inter-particle distance.
  double minsep2 = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      minsep2 = std::min(minsep2, dist2(s.domain, s.position_ptr(i), s.position_ptr(j)));
  double h = n > 1 ? 0.5 * std::sqrt(minsep2) : 1e-3;
  h = std::max(h, 1e-9);

  // dv_i: central differences of the velocity field around each particle.
  std::vector<double> dvnorm(size_t(n), 0.0);
  parallel_for(size_t(n), [&](size_t i) {
    double fro2 = 0.0;
    for (int a = 0; a < d; ++a) {
      Vec xp = s.position(int(i)), xm = xp;
      xp[a] += h;
      xm[a] -= h;
      Vec vp = detail::flow_velocity_at(k, s, tf, xp);
      Vec vm = detail::flow_velocity_at(k, s, tf, xm);
      for (int b = 0; b < d; ++b) {
        double e = (vp[b] - vm[b]) / (2.0 * h);
        fro2 += e * e;
      }
    }
    dvnorm[i] = std::sqrt(fro2);
  });
  for (double x : dvnorm) mon.sup_dv = std::max(mon.sup_dv, x);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double dist = std::sqrt(dist2(s.domain, s.position_ptr(i), s.position_ptr(j)));
      if (dist < 1e-12) continue;
      mon.holder_dv = std::max(
          mon.holder_dv, std::abs(dvnorm[size_t(i)] - dvnorm[size_t(j)]) / std::pow(dist, gamma));
    }

  // Stretch of psi from label pairs (nearest label neighbors).
  std::vector<double> stretch(size_t(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double bestlab = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double dl = dist2(s.domain, s.labels.data() + size_t(i) * size_t(d),
                        s.labels.data() + size_t(j) * size_t(d));
      bestlab = std::min(bestlab, dl);
    }
    if (!std::isfinite(bestlab) || bestlab <= 0.0) continue;
    double reach2 = 4.0 * bestlab;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      double dl2 = dist2(s.domain, s.labels.data() + size_t(i) * size_t(d),
                         s.labels.data() + size_t(j) * size_t(d));
      if (dl2 > reach2 || dl2 <= 0.0) continue;
      double dp2 = dist2(s.domain, s.position_ptr(i), s.position_ptr(j));
      stretch[size_t(i)] = std::max(stretch[size_t(i)], std::sqrt(dp2 / dl2));
    }
    mon.sup_dpsi = std::max(mon.sup_dpsi, stretch[size_t(i)]);
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double dl = std::sqrt(dist2(s.domain, s.labels.data() + size_t(i) * size_t(d),
                                  s.labels.data() + size_t(j) * size_t(d)));
      if (dl < 1e-12) continue;
      mon.holder_dpsi = std::max(mon.holder_dpsi, std::abs(stretch[size_t(i)] - stretch[size_t(j)]) /
                                                      std::pow(dl, gamma));
    }

  // Holder quotient of the density along the cloud.
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      double dist = std::sqrt(dist2(s.domain, s.position_ptr(i), s.position_ptr(j)));
      if (dist < 1e-12) continue;
      mon.holder_mu = std::max(mon.holder_mu, std::abs(s.densities[size_t(i)] -
                                                       s.densities[size_t(j)]) /
                                                  std::pow(dist, gamma));
    }

  if (!s.domain.is_torus()) mon.support_radius = support_radius(s.as_particles());

  require(std::isfinite(mon.sup_v) && std::isfinite(mon.sup_dv) && std::isfinite(mon.holder_dv) &&
              std::isfinite(mon.sup_dpsi) && std::isfinite(mon.holder_dpsi) &&
              std::isfinite(mon.holder_mu) && std::isfinite(mon.support_radius),
          Err::blowup_detected, "nonfinite regularity monitor");
  return mon;
}

// Piecewise-linear periodic reconstruction of the transported density from
// sorted (psi_i, f_i) samples; avoids the self-energy floor of atomic sums.
inline GridMeasure lagrangian_density_profile(const FlowState& s, int n_cells) {
  require(s.domain.is_torus() && s.dim() == 1, Err::torus_unsupported,
          "density profile reconstruction is 1-d torus only");
  require(s.size() >= 2, Err::bad_argument, "need at least two particles");
  const int n = s.size();
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return s.positions[size_t(a)] < s.positions[size_t(b)]; });
  std::vector<double> xs(static_cast<size_t>(n)), fs(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    xs[size_t(i)] = s.positions[size_t(order[size_t(i)])];
    fs[size_t(i)] = s.densities[size_t(order[size_t(i)])];
  }
  std::vector<double> vals(static_cast<size_t>(n_cells));
  for (int c = 0; c < n_cells; ++c) {
    double x = (c + 0.5) / n_cells;
    // Find the bracketing pair around x (periodic).
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    int hi = int(it - xs.begin()) % n;
    int lo = (hi + n - 1) % n;
    double gap = xs[size_t(hi)] - xs[size_t(lo)];
    double off = x - xs[size_t(lo)];
    if (gap <= 0.0) gap += 1.0;
    if (off < 0.0) off += 1.0;
    double theta = gap > 1e-300 ? off / gap : 0.0;
    vals[size_t(c)] = (1.0 - theta) * fs[size_t(lo)] + theta * fs[size_t(hi)];
  }
  return GridMeasure::torus({n_cells}, vals);
}

struct TrajectoryRecord {
  double t = 0.0;
  EnergyReport energy;
  RegularityMonitor regularity;
  FlowState state;
};

struct FlowTrajectory {
  std::vector<TrajectoryRecord> records;
  bool aborted = false;
  std::string abort_reason;
};

struct RunOptions {
  double dt = 1e-2;
  double t_end = 1.0;
  int record_every = 1;
  double gamma = 0.5;
  int profile_cells = 0;  // torus d=1 reconstruction size; 0 = match grid target
};

namespace detail {

inline EnergyReport record_energy(const Kernel& k, const FlowState& s, const Measure& nu,
                                  const std::vector<double>& v, int profile_cells) {
  // Torus d=1 against a grid target: reconstruct the density and report the
  // spectral energy with the PL diagnostics.
  if (k.domain.is_torus() && k.dim() == 1) {
    if (const auto* g = std::get_if<GridMeasure>(&nu)) {
      int cells = profile_cells > 0 ? profile_cells : g->shape[0];
      GridMeasure prof = lagrangian_density_profile(s, cells);
      double m = prof.mass();
      require(m > 0.0, Err::zero_density_cell, "empty reconstructed density");
      double target_mass = g->mass();
      GridMeasure tgt = *g;
      if (cells != g->shape[0]) {
        // Resample the target on the reconstruction lattice.
        std::vector<double> tv(static_cast<size_t>(cells));
        for (int c = 0; c < cells; ++c) tv[size_t(c)] = grid_interp(*g, Vec{(c + 0.5) / cells});
        tgt = GridMeasure::torus({cells}, tv);
        target_mass = tgt.mass();
      }
      for (double& x : prof.values) x *= target_mass / m;
      EnergyReport r = pl_report(k, prof, tgt, s.time);
      return r;
    }
  }
  EnergyReport r;
  r.t = s.time;
  r.energy = mmd_energy(k, Measure(s.as_particles()), nu, DiagonalPolicy::exclude);
  const int n = s.size(), d = s.dim();
  double g2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double v2 = 0.0;
    for (int a = 0; a < d; ++a) v2 += v[size_t(i) * size_t(d) + size_t(a)] *
                                      v[size_t(i) * size_t(d) + size_t(a)];
    g2 += s.initial_weights[size_t(i)] * v2;
  }
  r.grad_norm_sq = g2;
  r.pl_ratio = r.energy > 0.0 ? g2 / r.energy : std::numeric_limits<double>::infinity();
  auto [mn, mx] = std::minmax_element(s.densities.begin(), s.densities.end());
  r.min_density = *mn;
  r.max_density = *mx;
  return r;
}

}  // namespace detail

// Integrates to t_end, recording diagnostics every record_every steps. A
// collision or blowup stops the run early; the trajectory keeps every record
// up to and including the last valid state.
inline FlowTrajectory run_flow(const Kernel& k, FlowState s, const Measure& nu,
                               const RunOptions& opt) {
  require(opt.dt > 0.0 && opt.t_end >= 0.0, Err::bad_argument, "need dt > 0 and t_end >= 0");
  require(opt.record_every >= 1, Err::bad_argument, "record_every must be >= 1");
  FlowTrajectory traj;
  TargetField tf = make_target_field(k, nu);
  auto record = [&](const FlowState& st) {
    std::vector<double> v = detail::rhs_with_field(k, st, tf);
    TrajectoryRecord rec;
    rec.t = st.time;
    rec.energy = detail::record_energy(k, st, nu, v, opt.profile_cells);
    rec.regularity = monitor_state(k, st, nu, opt.gamma, &v);
    rec.state = st;
    traj.records.push_back(std::move(rec));
  };
  long nsteps = std::lround(std::ceil(opt.t_end / opt.dt - 1e-12));
  try {
    record(s);
    for (long it = 0; it < nsteps; ++it) {
      double dt = std::min(opt.dt, opt.t_end - s.time);
      if (dt <= 0.0) break;
      s = detail::step_with_field(s, k, nu, tf, dt);
      if ((it + 1) % opt.record_every == 0 || it + 1 == nsteps) record(s);
    }
  } catch (const Error& e) {
    if (e.code == Err::collision_detected || e.code == Err::blowup_detected ||
        e.code == Err::particle_collision) {
      traj.aborted = true;
      traj.abort_reason = e.what();
    } else {
      throw;
    }
  }
  return traj;
}

// Semi-Lagrangian step of the continuity equation on the torus: the advective
// part follows backtracked characteristics; the compression term -mu div(v) =
// -mu (mu - nu) integrates exactly as a logistic reaction (Strang split).
// The renormalization factor, if requested, reports the mass defect.
inline GridMeasure eulerian_step_torus(const GridMeasure& mu, const GridMeasure& nu,
                                       const Kernel& k, double dt, double* renorm = nullptr) {
  require(mu.domain.is_torus(), Err::domain_mismatch, "eulerian step is torus-only");
  require(dt > 0.0, Err::bad_argument, "time step must be positive");
  for (double v : mu.values)
    require(v > 0.0, Err::zero_density_cell, "eulerian step needs a strictly positive density");

  const int d = mu.dim();
  const size_t cells = mu.cells();

  // Exact logistic flow of df/dt = f (c - f) over time h.
  auto react = [](double f, double c, double h) {
    if (c <= 0.0) return f / (1.0 + f * h);
    return c * f / (f + (c - f) * std::exp(-c * h));
  };

  const double mass0 = mu.mass();
  double total_factor = 1.0;
  // The reaction does not conserve mass pointwise; rescale after each substep
  // and fold everything into the logged renormalization factor.
  auto rescale = [&](GridMeasure& g) {
    double m = g.mass();
    require(m > 0.0, Err::mass_drift_exceeded, "eulerian mass collapsed");
    double f = mass0 / m;
    total_factor *= f;
    for (double& v : g.values) v *= f;
  };
  auto half_react = [&](GridMeasure& g, double h) {
    for (size_t c = 0; c < cells; ++c) {
      double target = nu.values[c];
      g.values[c] = react(g.values[c], target, h);
    }
    rescale(g);
  };

  GridMeasure cur = mu;
  half_react(cur, 0.5 * dt);

  // Nodal velocity v = grad(phi) by the spectral multiplier 2 pi i k.
  GridMeasure phi = solve_potential(k, cur, nu);
  std::vector<cplx> hat(cells);
  for (size_t c = 0; c < cells; ++c) hat[c] = cplx(phi.values[c], 0.0);
  dft_nd(hat, mu.shape, false);
  std::vector<std::vector<double>> vel{size_t(d), std::vector<double>(cells)};
  {
    std::vector<cplx> work(cells);
    for (int a = 0; a < d; ++a) {
      for (size_t c = 0; c < cells; ++c) work[c] = hat[c];
      int tmp[max_dim];
      for (size_t c = 0; c < cells; ++c) {
        mu.unflatten(c, tmp);
        double kk = double(signed_freq(tmp[a], mu.shape[size_t(a)]));
        work[c] *= cplx(0.0, 2.0 * std::numbers::pi * kk);
      }
      dft_nd(work, mu.shape, true);
      for (size_t c = 0; c < cells; ++c) vel[size_t(a)][c] = work[c].real();
    }
  }
  // Multilinear interpolation of the nodal velocity components.
  auto velocity_at = [&](const Vec& x) {
    Vec v(d);
    int base[max_dim];
    double theta[max_dim];
    for (int a = 0; a < d; ++a) {
      double rel = x[a] * double(mu.shape[size_t(a)]) - 0.5;
      double fl = std::floor(rel);
      base[a] = static_cast<int>(fl);
      theta[a] = rel - fl;
    }
    for (int corner = 0; corner < (1 << d); ++corner) {
      double w = 1.0;
      int idx[max_dim];
      for (int a = 0; a < d; ++a) {
        int bit = (corner >> a) & 1;
        w *= bit ? theta[a] : 1.0 - theta[a];
        int nn = mu.shape[size_t(a)];
        idx[a] = (((base[a] + bit) % nn) + nn) % nn;
      }
      size_t flat = 0;
      for (int a = 0; a < d; ++a) flat = flat * size_t(mu.shape[size_t(a)]) + size_t(idx[a]);
      for (int a = 0; a < d; ++a) v[a] += w * vel[size_t(a)][flat];
    }
    return v;
  };

  // Advect: midpoint backtracking along -v, multilinear density interpolation.
  GridMeasure next = cur;
  parallel_for(cells, [&](size_t c) {
    Vec x = mu.center(c);
    Vec vm = velocity_at(x);
    Vec mid = x;
    for (int a = 0; a < d; ++a) mid[a] = wrap01(x[a] - 0.5 * dt * vm[a]);
    Vec vmid = velocity_at(mid);
    Vec src = x;
    for (int a = 0; a < d; ++a) src[a] = wrap01(x[a] - dt * vmid[a]);
    next.values[c] = grid_interp(cur, src);
  });

  rescale(next);
  half_react(next, 0.5 * dt);

  if (renorm) *renorm = total_factor;
  require(std::abs(total_factor - 1.0) <= 1e-4, Err::mass_drift_exceeded,
          "eulerian mass drift above 1e-4: factor " + std::to_string(total_factor));
  return next;
}

// Fits R(t) <= R_0 + C t against the recorded support radii; C is the maximal
// observed particle speed (the velocity bound that drives confinement).
struct ConfinementReport {
  double r0 = 0.0;
  double slope = 0.0;        // OLS slope of R(t)
  double speed_bound = 0.0;  // max sup_v over records
  int violations = 0;        // records with R(t) > R_0 + speed_bound * t + tol
  bool nondecreasing = true;
};

inline ConfinementReport confinement_check(const FlowTrajectory& traj) {
  require(!traj.records.empty(), Err::bad_argument, "empty trajectory");
  require(!traj.records.front().state.domain.is_torus(), Err::torus_unsupported,
          "confinement check is Euclidean-only");
  ConfinementReport rep;
  std::vector<double> ts, rs;
  for (const auto& rec : traj.records) {
    ts.push_back(rec.t);
    rs.push_back(rec.regularity.support_radius);
    rep.speed_bound = std::max(rep.speed_bound, rec.regularity.sup_v);
  }
  rep.r0 = rs.front();
  rep.slope = ts.size() >= 2 ? ols_slope(ts, rs) : 0.0;
  for (size_t i = 0; i < ts.size(); ++i) {
    if (rs[i] > rep.r0 + rep.speed_bound * ts[i] + 1e-9) ++rep.violations;
    if (i + 1 < ts.size() && rs[i + 1] < rs[i] - 1e-12) rep.nondecreasing = false;
  }
  return rep;
}

}  // namespace rieszflow
