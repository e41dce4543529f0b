#pragma once
// Shared vocabulary: small vectors, domains, error codes, thread helpers.

#include <array>
#include <cmath>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace rieszflow {

inline constexpr int max_dim = 8;

// Fixed-capacity point/vector. Dimensions stay tiny (<= 8), so value
// semantics are cheaper than heap vectors in the pairwise loops.
struct Vec {
  std::array<double, max_dim> v{};
  int n = 0;

  Vec() = default;
  explicit Vec(int dim) : n(dim) {}
  Vec(std::initializer_list<double> xs) {
    n = static_cast<int>(xs.size());
    int i = 0;
    for (double x : xs) v[static_cast<size_t>(i++)] = x;
  }

  double& operator[](int i) { return v[static_cast<size_t>(i)]; }
  double operator[](int i) const { return v[static_cast<size_t>(i)]; }
  int size() const { return n; }

  Vec& operator+=(const Vec& o) {
    for (int i = 0; i < n; ++i) v[size_t(i)] += o[i];
    return *this;
  }
  Vec& operator-=(const Vec& o) {
    for (int i = 0; i < n; ++i) v[size_t(i)] -= o[i];
    return *this;
  }
  Vec& operator*=(double a) {
    for (int i = 0; i < n; ++i) v[size_t(i)] *= a;
    return *this;
  }
};

inline Vec operator+(Vec a, const Vec& b) { return a += b; }
inline Vec operator-(Vec a, const Vec& b) { return a -= b; }
inline Vec operator*(double s, Vec a) { return a *= s; }

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (int i = 0; i < a.n; ++i) s += a[i] * b[i];
  return s;
}
inline double norm2(const Vec& a) { return dot(a, a); }
inline double norm(const Vec& a) { return std::sqrt(norm2(a)); }

enum class DomainKind { euclidean, torus };

struct Domain {
  DomainKind kind = DomainKind::euclidean;
  int dim = 1;

  static Domain euclidean(int d) { return {DomainKind::euclidean, d}; }
  static Domain torus(int d) { return {DomainKind::torus, d}; }
  bool is_torus() const { return kind == DomainKind::torus; }
  bool operator==(const Domain& o) const { return kind == o.kind && dim == o.dim; }
  bool operator!=(const Domain& o) const { return !(*this == o); }
  std::string str() const {
    return (is_torus() ? std::string("torus ") : std::string("euclidean ")) + std::to_string(dim);
  }
};

// Wrap a coordinate to [0, 1).
inline double wrap01(double x) {
  double u = x - std::floor(x);
  if (u >= 1.0) u -= 1.0;  // guards x = -1e-17 rounding to 1.0
  return u;
}

// Signed minimal-image difference on the unit torus, in [-1/2, 1/2).
inline double torus_diff(double x, double y) {
  double u = wrap01(x - y);
  return (u >= 0.5) ? u - 1.0 : u;
}

// Squared distance respecting the domain metric.
inline double dist2(const Domain& dom, const double* x, const double* y) {
  double s = 0;
  if (dom.is_torus()) {
    for (int i = 0; i < dom.dim; ++i) {
      double u = torus_diff(x[i], y[i]);
      s += u * u;
    }
  } else {
    for (int i = 0; i < dom.dim; ++i) {
      double u = x[i] - y[i];
      s += u * u;
    }
  }
  return s;
}

enum class Err {
  bad_argument,
  domain_mismatch,
  diagonal_singularity,
  truncation_too_small,
  nonpositive_time,
  lattice_mismatch,
  degenerate_fit,
  torus_unsupported,
  nonzero_mean,
  zero_density_cell,
  particle_collision,
  blowup_detected,
  collision_detected,
  mass_mismatch,
  size_exceeded,
  non_convergence,
  no_descent_set,
  line_search_failure,
  mass_drift_exceeded,
  io_error,
  parse_error,
  validation_error,
};

inline const char* err_name(Err e) {
  switch (e) {
    case Err::bad_argument: return "BadArgument";
    case Err::domain_mismatch: return "DomainMismatch";
    case Err::diagonal_singularity: return "DiagonalSingularity";
    case Err::truncation_too_small: return "TruncationTooSmall";
    case Err::nonpositive_time: return "NonpositiveTime";
    case Err::lattice_mismatch: return "LatticeMismatch";
    case Err::degenerate_fit: return "DegenerateFit";
    case Err::torus_unsupported: return "TorusUnsupported";
    case Err::nonzero_mean: return "NonzeroMean";
    case Err::zero_density_cell: return "ZeroDensityCell";
    case Err::particle_collision: return "ParticleCollision";
    case Err::blowup_detected: return "BlowupDetected";
    case Err::collision_detected: return "CollisionDetected";
    case Err::mass_mismatch: return "MassMismatch";
    case Err::size_exceeded: return "SizeExceeded";
    case Err::non_convergence: return "NonConvergence";
    case Err::no_descent_set: return "NoDescentSet";
    case Err::line_search_failure: return "LineSearchFailure";
    case Err::mass_drift_exceeded: return "MassDriftExceeded";
    case Err::io_error: return "IoError";
    case Err::parse_error: return "ParseError";
    case Err::validation_error: return "ValidationError";
  }
  return "Error";
}

struct Error : std::runtime_error {
  Err code;
  Error(Err c, const std::string& msg)
      : std::runtime_error(std::string(err_name(c)) + ": " + msg), code(c) {}
};

inline void require(bool cond, Err code, const std::string& msg) {
  if (!cond) throw Error(code, msg);
}

using Rng = std::mt19937_64;

// Thread budget: RIESZFLOW_THREADS caps the pool, default = hardware.
inline int thread_count() {
  static int n = [] {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("RIESZFLOW_THREADS")) {
      int k = std::atoi(env);
      if (k >= 1) return std::min(k, 64);
    }
    return std::min(hw, 16);
  }();
  return n;
}

// Parallel loop over [0, n) in fixed contiguous chunks, one per worker.
// Each index is processed by exactly one thread; per-index work that writes
// only to slot i is deterministic regardless of the thread count.
template <class F>
void parallel_for(std::size_t n, F&& body) {
  int workers = thread_count();
  if (workers <= 1 || n < 256) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::size_t chunk = (n + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    std::size_t lo = static_cast<std::size_t>(w) * chunk;
    if (lo >= n) break;
    std::size_t hi = std::min(n, lo + chunk);
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

// Ordinary least squares slope of y against x.
inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, Err::degenerate_fit, "need >= 2 points to fit");
  double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  double denom = n * sxx - sx * sx;
  require(std::abs(denom) > 1e-300, Err::degenerate_fit, "collinear abscissae in fit");
  return (n * sxy - sx * sy) / denom;
}

}  // namespace rieszflow
