#pragma once
// Measure carriers (particle clouds and lattice densities), Hahn-Jordan
// decomposition, heat smoothing, and the scaling diagnostics built on it.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <variant>
#include <vector>

#include "kernels.hpp"

namespace rieszflow {

struct ParticleMeasure {
  Domain domain = Domain::euclidean(1);
  std::vector<double> points;   // n * d, row-major
  std::vector<double> weights;  // n, nonnegative

  ParticleMeasure() = default;
  ParticleMeasure(Domain dom, std::vector<double> pts, std::vector<double> w)
      : domain(dom), points(std::move(pts)), weights(std::move(w)) {
    const size_t d = size_t(domain.dim);
    require(d >= 1 && d <= size_t(max_dim), Err::bad_argument, "unsupported dimension");
    require(points.size() == weights.size() * d, Err::bad_argument,
            "points/weights size mismatch");
    for (double w_i : weights)
      require(w_i >= 0.0, Err::validation_error, "particle weights must be nonnegative");
    if (domain.is_torus())
      for (double& c : points) c = wrap01(c);
  }

  int dim() const { return domain.dim; }
  int size() const { return static_cast<int>(weights.size()); }
  double mass() const {
    double m = 0;
    for (double w : weights) m += w;
    return m;
  }
  Vec point(int i) const {
    Vec p(dim());
    for (int a = 0; a < dim(); ++a) p[a] = points[size_t(i) * size_t(dim()) + size_t(a)];
    return p;
  }
  const double* point_ptr(int i) const { return points.data() + size_t(i) * size_t(dim()); }
};

// Lattice density: `values` are densities per cell (mass = value * cell
// volume), row-major over `shape`. Torus grids tile [0,1)^d with spacing
// 1/shape[a]; Euclidean grids carry an origin and per-axis spacing.
struct GridMeasure {
  Domain domain = Domain::euclidean(1);
  std::vector<int> shape;
  std::vector<double> values;
  std::vector<double> spacing;
  std::vector<double> origin;
  double cell_volume = 1.0;

  static GridMeasure torus(std::vector<int> shape_, std::vector<double> values_) {
    GridMeasure g;
    g.domain = Domain::torus(static_cast<int>(shape_.size()));
    g.shape = std::move(shape_);
    g.values = std::move(values_);
    g.cell_volume = 1.0;
    for (int n : g.shape) {
      require(n >= 1, Err::bad_argument, "grid shape must be positive");
      g.spacing.push_back(1.0 / double(n));
      g.origin.push_back(0.0);
      g.cell_volume /= double(n);
    }
    g.check_sizes();
    return g;
  }

  static GridMeasure euclidean(std::vector<int> shape_, std::vector<double> values_,
                               std::vector<double> origin_, double h) {
    GridMeasure g;
    g.domain = Domain::euclidean(static_cast<int>(shape_.size()));
    g.shape = std::move(shape_);
    g.values = std::move(values_);
    g.origin = std::move(origin_);
    g.cell_volume = 1.0;
    for (int n : g.shape) {
      require(n >= 1, Err::bad_argument, "grid shape must be positive");
      g.spacing.push_back(h);
      g.cell_volume *= h;
    }
    g.check_sizes();
    return g;
  }

  void check_sizes() const {
    size_t cells = 1;
    for (int n : shape) cells *= size_t(n);
    require(values.size() == cells, Err::bad_argument, "grid values size mismatch");
    require(origin.size() == shape.size() && spacing.size() == shape.size(), Err::bad_argument,
            "grid geometry size mismatch");
  }

  int dim() const { return domain.dim; }
  size_t cells() const { return values.size(); }
  double mass() const {
    double m = 0;
    for (double v : values) m += v;
    return m * cell_volume;
  }
  void unflatten(size_t flat, int* idx) const {
    for (int a = dim() - 1; a >= 0; --a) {
      idx[a] = static_cast<int>(flat % size_t(shape[size_t(a)]));
      flat /= size_t(shape[size_t(a)]);
    }
  }
  size_t flatten(const int* idx) const {
    size_t f = 0;
    for (int a = 0; a < dim(); ++a) f = f * size_t(shape[size_t(a)]) + size_t(idx[a]);
    return f;
  }
  Vec center(size_t flat) const {
    int idx[max_dim];
    unflatten(flat, idx);
    Vec c(dim());
    for (int a = 0; a < dim(); ++a)
      c[a] = origin[size_t(a)] + (double(idx[a]) + 0.5) * spacing[size_t(a)];
    return c;
  }
  bool same_lattice(const GridMeasure& o) const {
    if (domain != o.domain || shape != o.shape) return false;
    for (size_t a = 0; a < shape.size(); ++a)
      if (std::abs(spacing[a] - o.spacing[a]) > 1e-12 || std::abs(origin[a] - o.origin[a]) > 1e-12)
        return false;
    return true;
  }
};

using Measure = std::variant<ParticleMeasure, GridMeasure>;

inline const Domain& measure_domain(const Measure& m) {
  return std::visit([](const auto& x) -> const Domain& { return x.domain; }, m);
}
inline double measure_mass(const Measure& m) {
  return std::visit([](const auto& x) { return x.mass(); }, m);
}

inline void validate_probability(const Measure& m, double tol = 1e-9) {
  double mass = measure_mass(m);
  require(std::abs(mass - 1.0) <= tol, Err::mass_mismatch,
          "measure mass " + std::to_string(mass) + " is not 1 within tolerance");
}

// Nearest-cell deposit of a particle cloud onto a lattice; conserves mass
// exactly. Euclidean points must fall inside the grid box.
inline GridMeasure rasterize(const ParticleMeasure& mu, const GridMeasure& lattice) {
  require(mu.domain == lattice.domain, Err::domain_mismatch, "rasterize: domain mismatch");
  GridMeasure out = lattice;
  std::fill(out.values.begin(), out.values.end(), 0.0);
  const int d = mu.dim();
  for (int i = 0; i < mu.size(); ++i) {
    int idx[max_dim];
    for (int a = 0; a < d; ++a) {
      double rel = (mu.points[size_t(i) * size_t(d) + size_t(a)] - lattice.origin[size_t(a)]) /
                   lattice.spacing[size_t(a)];
      int c = static_cast<int>(std::floor(rel));
      if (lattice.domain.is_torus()) {
        c = ((c % lattice.shape[size_t(a)]) + lattice.shape[size_t(a)]) % lattice.shape[size_t(a)];
      } else {
        require(rel >= -1e-9 && rel <= double(lattice.shape[size_t(a)]) + 1e-9,
                Err::validation_error, "particle outside the grid box");
        c = std::clamp(c, 0, lattice.shape[size_t(a)] - 1);
      }
      idx[a] = c;
    }
    out.values[out.flatten(idx)] += mu.weights[size_t(i)] / out.cell_volume;
  }
  return out;
}

// --- Hahn-Jordan decomposition ---------------------------------------------

struct SignedDecomposition {
  Measure plus;   // positive part of mu - nu
  Measure minus;  // positive part of nu - mu
  double plus_mass() const { return measure_mass(plus); }
  double minus_mass() const { return measure_mass(minus); }
};

inline SignedDecomposition hahn_jordan(const GridMeasure& mu, const GridMeasure& nu) {
  require(mu.same_lattice(nu), Err::lattice_mismatch, "hahn_jordan grids must share a lattice");
  GridMeasure plus = mu, minus = mu;
  for (size_t c = 0; c < mu.cells(); ++c) {
    double diff = mu.values[c] - nu.values[c];
    plus.values[c] = diff > 0 ? diff : 0.0;
    minus.values[c] = diff < 0 ? -diff : 0.0;
  }
  return {Measure(std::move(plus)), Measure(std::move(minus))};
}

// Particle clouds: atoms at exactly coincident coordinates cancel; the net
// weight lands on the side of its sign. Disjoint atoms pass through.
inline SignedDecomposition hahn_jordan(const ParticleMeasure& mu, const ParticleMeasure& nu) {
  require(mu.domain == nu.domain, Err::domain_mismatch, "hahn_jordan: domain mismatch");
  const int d = mu.dim();
  std::map<std::vector<double>, double> net;
  for (int i = 0; i < mu.size(); ++i) {
    std::vector<double> key(mu.point_ptr(i), mu.point_ptr(i) + d);
    net[key] += mu.weights[size_t(i)];
  }
  for (int i = 0; i < nu.size(); ++i) {
    std::vector<double> key(nu.point_ptr(i), nu.point_ptr(i) + d);
    net[key] -= nu.weights[size_t(i)];
  }
  std::vector<double> ppts, pw, mpts, mw;
  for (const auto& [key, w] : net) {
    if (w > 0) {
      ppts.insert(ppts.end(), key.begin(), key.end());
      pw.push_back(w);
    } else if (w < 0) {
      mpts.insert(mpts.end(), key.begin(), key.end());
      mw.push_back(-w);
    }
  }
  return {Measure(ParticleMeasure(mu.domain, std::move(ppts), std::move(pw))),
          Measure(ParticleMeasure(mu.domain, std::move(mpts), std::move(mw)))};
}

// Mixed carriers: particles are rasterized onto the grid's lattice first.
inline SignedDecomposition hahn_jordan(const ParticleMeasure& mu, const GridMeasure& nu) {
  return hahn_jordan(rasterize(mu, nu), nu);
}
inline SignedDecomposition hahn_jordan(const GridMeasure& mu, const ParticleMeasure& nu) {
  return hahn_jordan(mu, rasterize(nu, mu));
}
inline SignedDecomposition hahn_jordan(const Measure& mu, const Measure& nu) {
  return std::visit([](const auto& a, const auto& b) { return hahn_jordan(a, b); }, mu, nu);
}

// --- heat smoothing ---------------------------------------------------------

// (K_t * mu)(x): exact Gaussian sum over atoms, midpoint quadrature over
// cells. The carrier's domain picks the Euclidean or periodized kernel.
inline double heat_smooth(const ParticleMeasure& mu, double t, const Vec& x) {
  require(t > 0.0, Err::nonpositive_time, "heat_smooth needs t > 0");
  HeatKernelSpec spec{mu.domain, mu.domain.is_torus() ? heat_periodization_terms(t) : 0};
  double acc = 0.0;
  for (int i = 0; i < mu.size(); ++i) acc += mu.weights[size_t(i)] * heat_kernel(spec, t, x, mu.point(i));
  return acc;
}

inline double heat_smooth(const GridMeasure& mu, double t, const Vec& x) {
  require(t > 0.0, Err::nonpositive_time, "heat_smooth needs t > 0");
  HeatKernelSpec spec{mu.domain, mu.domain.is_torus() ? heat_periodization_terms(t) : 0};
  double acc = 0.0;
  for (size_t c = 0; c < mu.cells(); ++c) {
    if (mu.values[c] == 0.0) continue;
    acc += mu.values[c] * heat_kernel(spec, t, x, mu.center(c));
  }
  return acc * mu.cell_volume;
}

inline double heat_smooth(const Measure& mu, double t, const Vec& x) {
  return std::visit([&](const auto& m) { return heat_smooth(m, t, x); }, mu);
}

// <alpha, K_t * beta> = sum_{ij} a_i b_j K_t(x_i, y_j); both carriers reduced
// to weighted site lists. Deterministic order: the outer loop is parallel
// over alpha sites, each inner sum is sequential.
struct SiteList {
  const Domain* domain;
  std::vector<double> pts;
  std::vector<double> w;
  int n = 0, d = 0;
  double cap_r = 0.0;  // kernel mollification radius (one cell width for grids)
};

inline SiteList sites_of(const ParticleMeasure& m) {
  SiteList s;
  s.domain = &m.domain;
  s.pts = m.points;
  s.w = m.weights;
  s.n = m.size();
  s.d = m.dim();
  return s;
}
inline SiteList sites_of(const GridMeasure& m) {
  SiteList s;
  s.domain = &m.domain;
  s.d = m.dim();
  for (double h : m.spacing) s.cap_r = std::max(s.cap_r, h);
  for (size_t c = 0; c < m.cells(); ++c) {
    if (m.values[c] == 0.0) continue;
    Vec x = m.center(c);
    for (int a = 0; a < s.d; ++a) s.pts.push_back(x[a]);
    s.w.push_back(m.values[c] * m.cell_volume);
    ++s.n;
  }
  return s;
}
inline SiteList sites_of(const Measure& m) {
  return std::visit([](const auto& x) { return sites_of(x); }, m);
}

inline double heat_pairing(const SiteList& alpha, const SiteList& beta, double t) {
  require(t > 0.0, Err::nonpositive_time, "heat pairing needs t > 0");
  require(*alpha.domain == *beta.domain, Err::domain_mismatch, "heat pairing: domain mismatch");
  const Domain dom = *alpha.domain;
  const int d = dom.dim;
  const double pref = std::pow(4.0 * std::numbers::pi * t, -0.5 * d);
  const double inv4t = 1.0 / (4.0 * t);
  std::vector<double> partial(size_t(alpha.n), 0.0);
  if (!dom.is_torus()) {
    parallel_for(size_t(alpha.n), [&](size_t i) {
      const double* xi = alpha.pts.data() + i * size_t(d);
      double acc = 0.0;
      for (size_t j = 0; j < size_t(beta.n); ++j) {
        const double* yj = beta.pts.data() + j * size_t(d);
        double r2 = 0;
        for (int a = 0; a < d; ++a) {
          double u = xi[a] - yj[a];
          r2 += u * u;
        }
        acc += beta.w[j] * std::exp(-r2 * inv4t);
      }
      partial[i] = acc * pref;
    });
  } else {
    HeatKernelSpec spec{dom, heat_periodization_terms(t)};
    parallel_for(size_t(alpha.n), [&](size_t i) {
      Vec x(d);
      for (int a = 0; a < d; ++a) x[a] = alpha.pts[i * size_t(d) + size_t(a)];
      double acc = 0.0;
      for (size_t j = 0; j < size_t(beta.n); ++j) {
        Vec y(d);
        for (int a = 0; a < d; ++a) y[a] = beta.pts[j * size_t(d) + size_t(a)];
        acc += beta.w[j] * heat_kernel(spec, t, x, y);
      }
      partial[i] = acc;
    });
  }
  double total = 0.0;
  for (size_t i = 0; i < partial.size(); ++i) total += alpha.w[i] * partial[i];
  return total;
}

// --- scaling diagnostics -----------------------------------------------------

struct DimensionEstimate {
  double q_hat = 0.0;   // local dimension d + 2 * slope
  double slope = 0.0;   // d log(K_t*mu)(x) / d log t
};

inline const Domain& measure_domain_of(const ParticleMeasure& m) { return m.domain; }
inline const Domain& measure_domain_of(const GridMeasure& m) { return m.domain; }
inline const Domain& measure_domain_of(const Measure& m) { return measure_domain(m); }

// Fits log (K_t*mu)(x) against log t; K_t*mu ~ t^{-(d-q)/2} near a q-dimensional
// set, so q_hat = d + 2*slope. The grid must span at least two decades.
template <class M>
DimensionEstimate local_dimension_estimate(const M& mu, const Vec& x,
                                           const std::vector<double>& t_grid) {
  require(t_grid.size() >= 4, Err::degenerate_fit, "need at least 4 probe times");
  double lo = t_grid.front(), hi = t_grid.front();
  for (double t : t_grid) {
    require(t > 0.0, Err::nonpositive_time, "probe times must be positive");
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  require(hi / lo >= 100.0 * (1.0 - 1e-12), Err::validation_error,
          "dimension fit needs t spanning two decades");
  std::vector<double> lx, ly;
  for (double t : t_grid) {
    double v = heat_smooth(mu, t, x);
    require(v > 0.0, Err::degenerate_fit, "vanishing smoothed density at probe point");
    lx.push_back(std::log(t));
    ly.push_back(std::log(v));
  }
  DimensionEstimate est;
  est.slope = ols_slope(lx, ly);
  const Domain& dom = measure_domain_of(mu);
  est.q_hat = double(dom.dim) + 2.0 * est.slope;
  return est;
}

// Discrete gamma-Holder seminorm of lattice samples: max |f_i - f_j| / d(x_i,x_j)^gamma
// over index offsets within Chebyshev distance `reach` (default 8 cells).
inline double holder_seminorm(const GridMeasure& f, double gamma, int reach = 8) {
  require(gamma > 0.0 && gamma <= 1.0, Err::bad_argument, "holder exponent must be in (0,1]");
  require(reach >= 1, Err::bad_argument, "reach must be >= 1");
  const int d = f.dim();
  double best = 0.0;
  std::vector<int> off(size_t(d), -reach);
  // Enumerate nonzero offsets once; scan all cells per offset.
  while (true) {
    bool zero = true;
    for (int a = 0; a < d; ++a) zero = zero && off[size_t(a)] == 0;
    if (!zero) {
      double dist2_ = 0.0;
      for (int a = 0; a < d; ++a) {
        double u = double(off[size_t(a)]) * f.spacing[size_t(a)];
        dist2_ += u * u;
      }
      double denom = std::pow(std::sqrt(dist2_), gamma);
      int idx[max_dim], jdx[max_dim];
      for (size_t c = 0; c < f.cells(); ++c) {
        f.unflatten(c, idx);
        bool ok = true;
        for (int a = 0; a < d && ok; ++a) {
          int j = idx[a] + off[size_t(a)];
          if (f.domain.is_torus()) {
            j = ((j % f.shape[size_t(a)]) + f.shape[size_t(a)]) % f.shape[size_t(a)];
          } else if (j < 0 || j >= f.shape[size_t(a)]) {
            ok = false;
          }
          jdx[a] = j;
        }
        if (!ok) continue;
        double r = std::abs(f.values[c] - f.values[f.flatten(jdx)]) / denom;
        if (r > best) best = r;
      }
    }
    int axis = 0;
    while (axis < d && off[size_t(axis)] == reach) off[size_t(axis++)] = -reach;
    if (axis == d) break;
    ++off[size_t(axis)];
  }
  return best;
}

// Radius of the support about the origin (Euclidean only).
inline double support_radius(const ParticleMeasure& mu) {
  require(!mu.domain.is_torus(), Err::torus_unsupported, "support radius is Euclidean-only");
  double r2max = 0.0;
  for (int i = 0; i < mu.size(); ++i) {
    if (mu.weights[size_t(i)] <= 0.0) continue;
    double r2 = 0.0;
    for (int a = 0; a < mu.dim(); ++a) {
      double u = mu.points[size_t(i) * size_t(mu.dim()) + size_t(a)];
      r2 += u * u;
    }
    r2max = std::max(r2max, r2);
  }
  return std::sqrt(r2max);
}

inline double support_radius(const GridMeasure& mu) {
  require(!mu.domain.is_torus(), Err::torus_unsupported, "support radius is Euclidean-only");
  double r2max = 0.0;
  for (size_t c = 0; c < mu.cells(); ++c) {
    if (mu.values[c] <= 0.0) continue;
    Vec x = mu.center(c);
    r2max = std::max(r2max, norm2(x));
  }
  return std::sqrt(r2max);
}

inline double support_radius(const Measure& mu) {
  return std::visit([](const auto& m) { return support_radius(m); }, mu);
}

}  // namespace rieszflow
