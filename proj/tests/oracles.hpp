#pragma once

// Independent reference implementations the test suite checks the library
// against. Everything here is written from the defining formulas, not by
// calling back into the code under test.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <rieszflow/core.hpp>

namespace oracle {

inline constexpr double pi = std::numbers::pi;

// Central-difference gradient of a scalar field f at x.
template <class F>
rieszflow::Vec fd_gradient(F&& f, const rieszflow::Vec& x, double h) {
  rieszflow::Vec g(x.n);
  for (int a = 0; a < x.n; ++a) {
    rieszflow::Vec xp = x, xm = x;
    xp[a] += h;
    xm[a] -= h;
    g[a] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// Central-difference Laplacian of a scalar field f at x.
template <class F>
double fd_laplacian(F&& f, const rieszflow::Vec& x, double h) {
  double fx = f(x), acc = 0.0;
  for (int a = 0; a < x.n; ++a) {
    rieszflow::Vec xp = x, xm = x;
    xp[a] += h;
    xm[a] -= h;
    acc += (f(xp) - 2.0 * fx + f(xm)) / (h * h);
  }
  return acc;
}

// Partial Fourier sum for the d=1 torus Green function:
//   G(u) = sum_{k>=1} cos(2 pi k u) / (2 pi^2 k^2).
inline double fourier_green_1d(double u, int terms) {
  double acc = 0.0;
  for (int k = terms; k >= 1; --k)
    acc += std::cos(2.0 * pi * k * u) / (2.0 * pi * pi * double(k) * double(k));
  return acc;
}

// Gaussian smoothing of the d=3 Coulomb kernel 1/r:
//   (K_t * 1/|.|)(r) = erf(r / (2 sqrt(t))) / r,  limit 1/sqrt(pi t) at r = 0.
inline double erf_coulomb_smoothed(double r, double t) {
  if (r < 1e-14) return 1.0 / std::sqrt(pi * t);
  return std::erf(r / (2.0 * std::sqrt(t))) / r;
}

// Exact solution of f' = f (c - f), f(0) = f0, c > 0.
inline double logistic_exact(double f0, double c, double t) {
  return c * f0 / (f0 + (c - f0) * std::exp(-c * t));
}

// Standard normal quantile: rational initial guess refined by Newton steps on
// Phi(z) - p with Phi evaluated through erfc (good to ~1e-15 in (0,1)).
inline double normal_quantile(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  double z;
  if (p < 0.02425) {
    double q = std::sqrt(-2.0 * std::log(p));
    z = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p > 1.0 - 0.02425) {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    z = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    double q = p - 0.5, r = q * q;
    z = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  for (int it = 0; it < 2; ++it) {
    double cdf = 0.5 * std::erfc(-z / std::sqrt(2.0));
    double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
    z -= (cdf - p) / pdf;
  }
  return z;
}

// Squared 2-Wasserstein distance between equal-size, equal-weight clouds on
// the line: sort both and pair off quantiles.
inline double w2_squared_sorted(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / double(a.size());
}

// Uniform point in [lo, hi]^d.
inline rieszflow::Vec rand_box(rieszflow::Rng& rng, int d, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  rieszflow::Vec x(d);
  for (int i = 0; i < d; ++i) x[i] = u(rng);
  return x;
}

// Uniform point in the unit ball of R^d (rejection).
inline rieszflow::Vec rand_ball(rieszflow::Rng& rng, int d) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (;;) {
    rieszflow::Vec x(d);
    double r2 = 0.0;
    for (int i = 0; i < d; ++i) {
      x[i] = u(rng);
      r2 += x[i] * x[i];
    }
    if (r2 <= 1.0) return x;
  }
}

// Golden-angle spiral on the radius-R sphere in R^3: a deterministic
// near-uniform cloud with nearly constant nearest-neighbor spacing.
inline std::vector<double> fibonacci_sphere(int n, double R) {
  std::vector<double> pts;
  pts.reserve(size_t(n) * 3);
  const double ga = pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    double z = 1.0 - (2.0 * i + 1.0) / double(n);
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double phi = ga * double(i);
    pts.push_back(R * r * std::cos(phi));
    pts.push_back(R * r * std::sin(phi));
    pts.push_back(R * z);
  }
  return pts;
}

// Uniform point on the radius-R sphere in R^3.
inline rieszflow::Vec rand_sphere3(rieszflow::Rng& rng, double R) {
  std::normal_distribution<double> g(0.0, 1.0);
  for (;;) {
    rieszflow::Vec x(3);
    double r2 = 0.0;
    for (int i = 0; i < 3; ++i) {
      x[i] = g(rng);
      r2 += x[i] * x[i];
    }
    if (r2 > 1e-12) {
      double s = R / std::sqrt(r2);
      for (int i = 0; i < 3; ++i) x[i] *= s;
      return x;
    }
  }
}

// Ordinary least squares slope of y against x.
inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= double(x.size());
  my /= double(x.size());
  double sxx = 0.0, sxy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / sxx;
}

}  // namespace oracle
