#pragma once
// MMD interaction energies E_nu(mu) = (1/2) <mu-nu, G * (mu-nu)>, the induced
// velocity field v = -grad G * (mu - nu), the spectral Poisson solve on the
// torus, and the Polyak-Lojasiewicz report.

#include <limits>

#include "fourier.hpp"
#include "measures.hpp"

namespace rieszflow {

enum class DiagonalPolicy { include, exclude };

// Flat-capped kernel value: G(max(r, cap)). cap > 0 only for lattice carriers
// on R^d, where it mollifies the kernel at one cell width.
inline double capped_kernel_value(const Kernel& k, double r, double cap) {
  return riesz_value(k.family, k.s, std::max(r, cap));
}

// sum_{i,j} a_i b_j G(x_i - y_j); `same` marks the A == B diagonal blocks,
// where `policy` decides whether i == j terms enter.
inline double interaction_block(const Kernel& k, const SiteList& A, const SiteList& B, bool same,
                                DiagonalPolicy policy) {
  require(*A.domain == k.domain && *B.domain == k.domain, Err::domain_mismatch,
          "interaction block: measure/kernel domain mismatch");
  const int d = k.dim();
  const bool torus = k.domain.is_torus();
  const double cap = std::max(A.cap_r, B.cap_r);
  const bool skip_diag = same && policy == DiagonalPolicy::exclude;
  std::vector<double> partial(size_t(A.n), 0.0);
  parallel_for(size_t(A.n), [&](size_t i) {
    const double* xi = A.pts.data() + i * size_t(d);
    double acc = 0.0;
    for (size_t j = 0; j < size_t(B.n); ++j) {
      if (skip_diag && j == i) continue;
      const double* yj = B.pts.data() + j * size_t(d);
      double val;
      if (torus) {
        if (d == 1) {
          val = torus_green_1d(xi[0] - yj[0]);
        } else {
          double u[max_dim];
          for (int a = 0; a < d; ++a) u[a] = wrap01(xi[a] - yj[a]);
          val = torus_green_sum(k.domain, u, k.fourier_truncation);
        }
      } else {
        val = capped_kernel_value(k, std::sqrt(dist2(k.domain, xi, yj)), cap);
      }
      acc += B.w[j] * val;
    }
    partial[i] = acc;
  });
  double total = 0.0;
  for (size_t i = 0; i < partial.size(); ++i) total += A.w[i] * partial[i];
  return total;
}

// Plain DFT of grid values (row-major, no normalization).
inline std::vector<cplx> grid_dft(const GridMeasure& g) {
  std::vector<cplx> data(g.values.begin(), g.values.end());
  dft_nd(data, g.shape, false);
  return data;
}

// Spectral energy of a signed lattice density on the torus:
// (1/2) sum_{k != 0} |rho_hat(k)|^2 / (4 pi^2 |k|^2), with rho_hat the
// midpoint-quadrature Fourier coefficient (cell_volume * DFT).
inline double spectral_energy(const GridMeasure& rho) {
  require(rho.domain.is_torus(), Err::domain_mismatch, "spectral energy needs a torus grid");
  std::vector<cplx> f = grid_dft(rho);
  const double four_pi2 = 4.0 * std::numbers::pi * std::numbers::pi;
  double acc = 0.0;
  for (size_t c = 1; c < f.size(); ++c) {
    double k2 = freq_norm2(c, rho.shape);
    if (k2 == 0.0) continue;
    acc += std::norm(f[c]) / (four_pi2 * k2);
  }
  return 0.5 * acc * rho.cell_volume * rho.cell_volume;
}

inline bool spectral_pair(const Measure& mu, const Measure& nu, const Kernel& k) {
  if (!k.domain.is_torus()) return false;
  auto* gm = std::get_if<GridMeasure>(&mu);
  auto* gn = std::get_if<GridMeasure>(&nu);
  return gm && gn && gm->same_lattice(*gn);
}

// E_nu(mu). Torus lattice pairs go through the exact spectral form; all other
// carriers through pairwise sums (capped kernel for Euclidean grids).
// `policy` governs self-pairs of atomic carriers; include is the canonical
// quadratic form, exclude is required for singular kernels over atoms.
inline double mmd_energy(const Kernel& k, const Measure& mu, const Measure& nu,
                         DiagonalPolicy policy = DiagonalPolicy::include) {
  if (spectral_pair(mu, nu, k)) {
    const auto& gm = std::get<GridMeasure>(mu);
    const auto& gn = std::get<GridMeasure>(nu);
    GridMeasure rho = gm;
    for (size_t c = 0; c < rho.cells(); ++c) rho.values[c] -= gn.values[c];
    return spectral_energy(rho);
  }
  SiteList a = sites_of(mu), b = sites_of(nu);
  double e = interaction_block(k, a, a, true, policy) - 2.0 * interaction_block(k, a, b, false, policy) +
             interaction_block(k, b, b, true, policy);
  return 0.5 * e;
}

// --- spectral Poisson solve --------------------------------------------------

// phi with Laplace(phi) = mu - nu on T^d: phi_hat(k) = -rho_hat(k)/(4 pi^2 |k|^2),
// zero-mean. Returned on the shared lattice with signed values.
inline GridMeasure solve_potential(const Kernel& k, const GridMeasure& mu, const GridMeasure& nu) {
  require(k.domain.is_torus(), Err::domain_mismatch, "solve_potential lives on the torus");
  require(mu.domain == k.domain && mu.same_lattice(nu), Err::lattice_mismatch,
          "solve_potential needs grids on one lattice");
  double dm = mu.mass() - nu.mass();
  require(std::abs(dm) <= 1e-9 * std::max(1.0, std::abs(mu.mass())), Err::nonzero_mean,
          "mu and nu must carry equal mass");
  std::vector<cplx> f(mu.values.size());
  for (size_t c = 0; c < mu.values.size(); ++c) f[c] = cplx(mu.values[c] - nu.values[c], 0.0);
  dft_nd(f, mu.shape, false);
  const double four_pi2 = 4.0 * std::numbers::pi * std::numbers::pi;
  for (size_t c = 0; c < f.size(); ++c) {
    double k2 = freq_norm2(c, mu.shape);
    f[c] = (k2 == 0.0) ? cplx(0, 0) : -f[c] / (four_pi2 * k2);
  }
  dft_nd(f, mu.shape, true);
  GridMeasure phi = mu;
  for (size_t c = 0; c < f.size(); ++c) phi.values[c] = f[c].real();
  return phi;
}

// Trigonometric interpolation of a lattice field and of its gradient at an
// arbitrary torus point. Exact on the grid's resolved modes.
struct SpectralField {
  std::vector<cplx> coef;  // b_k over flattened modes, plain-DFT order
  std::vector<int> shape;

  static SpectralField build(const GridMeasure& g) {
    SpectralField s;
    s.shape = g.shape;
    s.coef = grid_dft(g);
    size_t total = s.coef.size();
    // Fold in 1/N and the half-cell phase so coefficients multiply e^{2pi i k.x}.
    for (size_t c = 0; c < total; ++c) {
      double phase = 0.0;
      size_t rem = c;
      for (int a = static_cast<int>(s.shape.size()) - 1; a >= 0; --a) {
        int n = s.shape[size_t(a)];
        int k = static_cast<int>(rem % size_t(n));
        rem /= size_t(n);
        phase -= std::numbers::pi * double(signed_freq(k, n)) / double(n);
      }
      s.coef[c] *= cplx(std::cos(phase), std::sin(phase)) / double(total);
    }
    return s;
  }

  double value(const Vec& x) const { return eval(x, -1).real(); }
  // partial derivative along `axis` (2 pi i k_axis factor); axis = -1: value
  cplx eval(const Vec& x, int axis) const {
    cplx acc(0, 0);
    const int d = static_cast<int>(shape.size());
    for (size_t c = 0; c < coef.size(); ++c) {
      double phase = 0.0;
      double kaxis = 0.0;
      size_t rem = c;
      for (int a = d - 1; a >= 0; --a) {
        int n = shape[size_t(a)];
        int k = signed_freq(static_cast<int>(rem % size_t(n)), n);
        rem /= size_t(n);
        phase += double(k) * x[a];
        if (a == axis) kaxis = double(k);
      }
      cplx term = coef[c] * cplx(std::cos(2.0 * std::numbers::pi * phase),
                                 std::sin(2.0 * std::numbers::pi * phase));
      if (axis >= 0) term *= cplx(0.0, 2.0 * std::numbers::pi * kaxis);
      acc += term;
    }
    return acc;
  }
  Vec gradient(const Vec& x) const {
    Vec g(static_cast<int>(shape.size()));
    for (int a = 0; a < g.n; ++a) g[a] = eval(x, a).real();
    return g;
  }
};

// --- velocity field -----------------------------------------------------------

// v(x) = -[sum_mu w grad G(x - y) - sum_nu w grad G(x - y)]; the descent
// velocity of E_nu at mu. Torus lattice pairs evaluate grad phi spectrally.
inline Vec velocity_field(const Kernel& k, const Measure& mu, const Measure& nu, const Vec& x) {
  if (spectral_pair(mu, nu, k)) {
    GridMeasure phi = solve_potential(k, std::get<GridMeasure>(mu), std::get<GridMeasure>(nu));
    return SpectralField::build(phi).gradient(x);
  }
  SiteList lists[2] = {sites_of(mu), sites_of(nu)};
  const int d = k.dim();
  Vec v(d);
  for (int side = 0; side < 2; ++side) {
    const SiteList& L = lists[side];
    require(*L.domain == k.domain, Err::domain_mismatch, "velocity: measure/kernel domain mismatch");
    const double sign = side == 0 ? -1.0 : 1.0;  // -grad G * (mu - nu)
    for (size_t j = 0; j < size_t(L.n); ++j) {
      const double* yj = L.pts.data() + j * size_t(d);
      if (k.domain.is_torus()) {
        if (d == 1) {
          v[0] += sign * L.w[j] * torus_green_1d_deriv(x[0] - yj[0]);
        } else {
          double u[max_dim];
          for (int a = 0; a < d; ++a) u[a] = wrap01(x[a] - yj[a]);
          Vec g = torus_green_sum_grad(k.domain, u, k.fourier_truncation);
          for (int a = 0; a < d; ++a) v[a] += sign * L.w[j] * g[a];
        }
      } else {
        double r2 = 0.0;
        double z[max_dim];
        for (int a = 0; a < d; ++a) {
          z[a] = x[a] - yj[a];
          r2 += z[a] * z[a];
        }
        if (r2 == 0.0) {
          require(k.s < 0.0 || k.family == KernelFamily::energy_distance, Err::diagonal_singularity,
                  "velocity at an atom of a singular kernel");
          continue;  // principal value
        }
        if (r2 <= L.cap_r * L.cap_r) continue;  // flat cap: zero gradient inside
        double s_eff = (k.family == KernelFamily::logarithmic) ? 0.0 : k.s;
        double w = -std::pow(r2, -0.5 * (s_eff + 2.0)) * L.w[j];
        for (int a = 0; a < d; ++a) v[a] += sign * w * z[a];
      }
    }
  }
  return v;
}

// --- Polyak-Lojasiewicz report -------------------------------------------------

struct EnergyReport {
  double t = 0.0;
  double energy = 0.0;
  double grad_norm_sq = 0.0;  // || grad phi ||^2 in L^2(mu)
  double pl_ratio = 0.0;      // grad_norm_sq / energy; +inf when energy = 0
  double min_density = 0.0;
  double max_density = 0.0;
};

// PL functional inequality data for strictly positive lattice densities on
// T^d: energy <= (1 / min mu) * grad_norm_sq. grad phi uses centered
// differences, as a deliberately independent discretization of the spectral phi.
inline EnergyReport pl_report(const Kernel& k, const GridMeasure& mu, const GridMeasure& nu,
                              double t = 0.0) {
  require(k.domain.is_torus(), Err::domain_mismatch, "pl_report lives on the torus");
  require(mu.same_lattice(nu), Err::lattice_mismatch, "pl_report needs grids on one lattice");
  EnergyReport rep;
  rep.t = t;
  rep.min_density = *std::min_element(mu.values.begin(), mu.values.end());
  rep.max_density = *std::max_element(mu.values.begin(), mu.values.end());
  require(rep.min_density > 0.0, Err::zero_density_cell, "pl_report needs strictly positive density");
  GridMeasure rho = mu;
  for (size_t c = 0; c < rho.cells(); ++c) rho.values[c] -= nu.values[c];
  rep.energy = spectral_energy(rho);
  GridMeasure phi = solve_potential(k, mu, nu);
  const int d = mu.dim();
  double acc = 0.0;
  int idx[max_dim], jdx[max_dim];
  for (size_t c = 0; c < mu.cells(); ++c) {
    mu.unflatten(c, idx);
    double g2 = 0.0;
    for (int a = 0; a < d; ++a) {
      int n = mu.shape[size_t(a)];
      for (int aa = 0; aa < d; ++aa) jdx[aa] = idx[aa];
      jdx[a] = (idx[a] + 1) % n;
      double fwd = phi.values[mu.flatten(jdx)];
      jdx[a] = (idx[a] - 1 + n) % n;
      double bwd = phi.values[mu.flatten(jdx)];
      double g = (fwd - bwd) / (2.0 * mu.spacing[size_t(a)]);
      g2 += g * g;
    }
    acc += g2 * mu.values[c];
  }
  rep.grad_norm_sq = acc * mu.cell_volume;
  rep.pl_ratio = rep.energy > 0.0 ? rep.grad_norm_sq / rep.energy
                                  : std::numeric_limits<double>::infinity();
  return rep;
}

}  // namespace rieszflow
