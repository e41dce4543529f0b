#pragma once
// Interaction kernels: the Riesz family on R^d and the periodic Green
// function on the flat torus, plus Gaussian heat kernels on both domains.

#include <cmath>
#include <numbers>

#include "core.hpp"

namespace rieszflow {

enum class KernelFamily { riesz, coulomb, energy_distance, logarithmic };

inline const char* family_name(KernelFamily f) {
  switch (f) {
    case KernelFamily::riesz: return "riesz";
    case KernelFamily::coulomb: return "coulomb";
    case KernelFamily::energy_distance: return "energy_distance";
    case KernelFamily::logarithmic: return "log";
  }
  return "?";
}

// Surface measure of the unit sphere S^{d-1} in R^d.
inline double sphere_surface_area(int d) {
  require(d >= 1, Err::bad_argument, "dimension must be positive");
  return 2.0 * std::pow(std::numbers::pi, 0.5 * d) / std::tgamma(0.5 * d);
}

// Constant c_d with -Laplace(G) = c_d * delta for G(z) = |z|^{2-d}/(d-2).
inline double coulomb_normalization(int d) { return sphere_surface_area(d); }

// k_s(x,y) = |x-y|^{-s}/s for s in [-1, d-2]\{0}; s = 0 is the log kernel.
// On the torus the kernel is the zero-mean Green function of the Laplacian
// regardless of the family tag (only the coulomb tag is accepted there).
struct Kernel {
  KernelFamily family = KernelFamily::riesz;
  double s = -1.0;                // Riesz exponent; ignored for logarithmic
  Domain domain = Domain::euclidean(1);
  int fourier_truncation = 64;    // per-axis mode bound for torus sums, d >= 2

  static Kernel riesz(double s, int d) {
    require(d >= 1, Err::bad_argument, "dimension must be positive");
    require(s >= -1.0 && s <= double(d - 2) && s != 0.0, Err::bad_argument,
            "riesz exponent must lie in [-1, d-2] and be nonzero");
    return Kernel{KernelFamily::riesz, s, Domain::euclidean(d), 64};
  }
  static Kernel coulomb(int d) {
    require(d >= 3, Err::bad_argument, "coulomb kernel needs d >= 3 (use energy_distance in d=1)");
    return Kernel{KernelFamily::coulomb, double(d - 2), Domain::euclidean(d), 64};
  }
  static Kernel energy_distance(int d) {
    require(d >= 1, Err::bad_argument, "dimension must be positive");
    return Kernel{KernelFamily::energy_distance, -1.0, Domain::euclidean(d), 64};
  }
  static Kernel logarithmic(int d) {
    require(d >= 2, Err::bad_argument, "log kernel needs d >= 2");
    return Kernel{KernelFamily::logarithmic, 0.0, Domain::euclidean(d), 64};
  }
  static Kernel torus_coulomb(int d, int truncation = 64) {
    require(d >= 1, Err::bad_argument, "dimension must be positive");
    require(truncation >= 1, Err::truncation_too_small, "fourier_truncation must be >= 1");
    return Kernel{KernelFamily::coulomb, double(std::max(d - 2, 1)), Domain::torus(d), truncation};
  }

  int dim() const { return domain.dim; }
};

// --- torus Green function -------------------------------------------------
// Zero-mean solution of Laplace(G) = 1 - delta on T^d, i.e. the Fourier
// multiplier +1/(4 pi^2 |k|^2) on nonzero modes (positive definite sign).

// Per-axis min-image separation in [0, 1/2]. Built from |x - y| so both
// argument orders produce bit-identical values (the Green functions below
// are even in each axis, and symmetry of eval_kernel must be exact).
inline double axis_min_image(double x, double y) {
  double a = std::fabs(x - y);
  a -= std::floor(a);
  return a > 0.5 ? 1.0 - a : a;
}

// d = 1 closed form, evaluated on the min-image separation r in [0, 1/2]:
// G(r) = r^2/2 - r/2 + 1/12.
inline double torus_green_1d(double u) {
  double r = axis_min_image(u, 0.0);
  return 0.5 * r * r - 0.5 * r + 1.0 / 12.0;
}

// d/du of the d=1 Green function; principal value 0 at the kink u = 0.
inline double torus_green_1d_deriv(double u) {
  u = wrap01(u);
  if (u == 0.0) return 0.0;
  return u - 0.5;
}

// Truncated cosine sum over 0 < |k|_inf <= N, used for d >= 2.
inline double torus_green_sum(const Domain& dom, const double* u, int N) {
  require(N >= 1, Err::truncation_too_small, "fourier truncation must be >= 1");
  const int d = dom.dim;
  const double four_pi2 = 4.0 * std::numbers::pi * std::numbers::pi;
  // Iterate k in [-N, N]^d \ {0}.
  std::array<int, max_dim> k{};
  for (int i = 0; i < d; ++i) k[size_t(i)] = -N;
  double acc = 0.0;
  while (true) {
    double k2 = 0.0, phase = 0.0;
    for (int i = 0; i < d; ++i) {
      k2 += double(k[size_t(i)]) * double(k[size_t(i)]);
      phase += double(k[size_t(i)]) * u[i];
    }
    if (k2 > 0.0) acc += std::cos(2.0 * std::numbers::pi * phase) / (four_pi2 * k2);
    int axis = 0;
    while (axis < d && k[size_t(axis)] == N) k[size_t(axis++)] = -N;
    if (axis == d) break;
    ++k[size_t(axis)];
  }
  return acc;
}

inline Vec torus_green_sum_grad(const Domain& dom, const double* u, int N) {
  require(N >= 1, Err::truncation_too_small, "fourier truncation must be >= 1");
  const int d = dom.dim;
  const double two_pi = 2.0 * std::numbers::pi;
  std::array<int, max_dim> k{};
  for (int i = 0; i < d; ++i) k[size_t(i)] = -N;
  Vec g(d);
  while (true) {
    double k2 = 0.0, phase = 0.0;
    for (int i = 0; i < d; ++i) {
      k2 += double(k[size_t(i)]) * double(k[size_t(i)]);
      phase += double(k[size_t(i)]) * u[i];
    }
    if (k2 > 0.0) {
      double w = -std::sin(two_pi * phase) / (two_pi * k2);
      for (int i = 0; i < d; ++i) g[i] += w * double(k[size_t(i)]);
    }
    int axis = 0;
    while (axis < d && k[size_t(axis)] == N) k[size_t(axis++)] = -N;
    if (axis == d) break;
    ++k[size_t(axis)];
  }
  return g;
}

inline double torus_green(const Kernel& k, const Vec& u) {
  require(k.domain.is_torus(), Err::domain_mismatch, "torus_green needs a torus kernel");
  if (k.dim() == 1) return torus_green_1d(u[0]);
  // The truncated sum is even in every axis, so the min-image fold keeps the
  // value and makes evaluation exactly symmetric in the two points.
  std::array<double, max_dim> w{};
  for (int i = 0; i < k.dim(); ++i) w[size_t(i)] = axis_min_image(u[i], 0.0);
  return torus_green_sum(k.domain, w.data(), k.fourier_truncation);
}

// --- kernel evaluation ----------------------------------------------------

inline double riesz_value(KernelFamily fam, double s, double r) {
  if (fam == KernelFamily::logarithmic) {
    require(r > 0.0, Err::diagonal_singularity, "log kernel at zero separation");
    return -std::log(r);
  }
  if (s > 0.0) {
    require(r > 0.0, Err::diagonal_singularity, "singular riesz kernel at zero separation");
    return std::pow(r, -s) / s;
  }
  // s < 0: continuous at r = 0 with value 0.
  return std::pow(r, -s) / s;
}

inline double eval_kernel(const Kernel& k, const Vec& x, const Vec& y) {
  require(x.n == k.dim() && y.n == k.dim(), Err::domain_mismatch, "point dimension mismatch");
  if (k.domain.is_torus()) return torus_green(k, x - y);
  double r = std::sqrt(dist2(k.domain, x.v.data(), y.v.data()));
  return riesz_value(k.family, k.s, r);
}

// grad_x k(x,y). Euclidean Riesz family: -z * |z|^{-s-2} with z = x - y
// (covers coulomb -z/|z|^d, energy distance -z/|z|, log -z/|z|^2).
inline Vec grad_kernel(const Kernel& k, const Vec& x, const Vec& y) {
  require(x.n == k.dim() && y.n == k.dim(), Err::domain_mismatch, "point dimension mismatch");
  const int d = k.dim();
  if (k.domain.is_torus()) {
    std::array<double, max_dim> w{};
    bool coincident = true;
    for (int i = 0; i < d; ++i) {
      w[size_t(i)] = wrap01(x[i] - y[i]);
      if (w[size_t(i)] != 0.0) coincident = false;
    }
    require(!coincident, Err::diagonal_singularity, "kernel gradient at zero separation");
    if (d == 1) {
      Vec g(1);
      g[0] = torus_green_1d_deriv(w[0]);
      return g;
    }
    return torus_green_sum_grad(k.domain, w.data(), k.fourier_truncation);
  }
  Vec z = x - y;
  double r2 = norm2(z);
  require(r2 > 0.0, Err::diagonal_singularity, "kernel gradient at zero separation");
  double s_eff = (k.family == KernelFamily::logarithmic) ? 0.0 : k.s;
  double w = -std::pow(r2, -0.5 * (s_eff + 2.0));
  Vec g = z;
  g *= w;
  return g;
}

// --- heat kernels ----------------------------------------------------------

// Periodization depth for the torus heat kernel at time t: per-term tail
// exp(-M^2/(4t)) < 1e-13 requires M >= 8*sqrt(2t) or so; the +2 pads the
// unit-cell offset. Satisfies M >= ceil(1 + 3*sqrt(2t)).
inline int heat_periodization_terms(double t) {
  return static_cast<int>(std::ceil(1.0 + 8.0 * std::sqrt(2.0 * t))) + 2;
}

struct HeatKernelSpec {
  Domain domain = Domain::euclidean(1);
  int periodization_terms = 0;  // 0: choose from t at evaluation time

  static HeatKernelSpec euclidean(int d) { return {Domain::euclidean(d), 0}; }
  static HeatKernelSpec torus(int d, int terms = 0) { return {Domain::torus(d), terms}; }
};

// K_t(x) = (4 pi t)^{-d/2} exp(-|x|^2 / 4t) on R^d; on T^d the per-axis
// periodization sum_{|n| <= M} K^1_t(u + n), multiplied across axes.
inline double heat_kernel(const HeatKernelSpec& spec, double t, const Vec& x, const Vec& y) {
  require(t > 0.0, Err::nonpositive_time, "heat kernel needs t > 0");
  const int d = spec.domain.dim;
  require(x.n == d && y.n == d, Err::domain_mismatch, "point dimension mismatch");
  const double pref1 = 1.0 / std::sqrt(4.0 * std::numbers::pi * t);
  if (!spec.domain.is_torus()) {
    double r2 = 0;
    for (int i = 0; i < d; ++i) {
      double u = x[i] - y[i];
      r2 += u * u;
    }
    return std::pow(pref1, d) * std::exp(-r2 / (4.0 * t));
  }
  int M = spec.periodization_terms > 0 ? spec.periodization_terms : heat_periodization_terms(t);
  require(M >= 1, Err::truncation_too_small, "periodization_terms must be >= 1");
  double prod = 1.0;
  for (int i = 0; i < d; ++i) {
    double u = torus_diff(x[i], y[i]);
    double axis = 0.0;
    for (int n = -M; n <= M; ++n) {
      double z = u + double(n);
      axis += std::exp(-z * z / (4.0 * t));
    }
    prod *= pref1 * axis;
  }
  return prod;
}

// P_k(x) = sum_i w_i |x - x_i|^{-k}; the inverse-distance moments tied to the
// identity Laplace(P_{2j+1}) = (2j+1)(2j+3-d) P_{2j+3}. Requires odd k with
// 1 <= k <= d-2 and x off the support.
template <class Particles>
double riesz_potential_moment(const Particles& mu, int k_order, const Vec& x) {
  require(!mu.domain.is_torus(), Err::torus_unsupported, "moments are Euclidean-only");
  const int d = mu.domain.dim;
  require(k_order % 2 == 1 && k_order >= 1 && k_order <= d - 2, Err::bad_argument,
          "moment order must be odd and in [1, d-2]");
  double acc = 0.0;
  for (int i = 0; i < mu.size(); ++i) {
    double r2 = 0.0;
    for (int a = 0; a < d; ++a) {
      double u = x[a] - mu.points[size_t(i) * size_t(d) + size_t(a)];
      r2 += u * u;
    }
    require(r2 > 1e-28, Err::diagonal_singularity, "moment evaluated on an atom");
    acc += mu.weights[size_t(i)] * std::pow(r2, -0.5 * double(k_order));
  }
  return acc;
}

}  // namespace rieszflow
