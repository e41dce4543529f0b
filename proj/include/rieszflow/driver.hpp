#pragma once
// Command drivers behind the CLI: build kernels and measures from a
// RunConfig, run the requested computation, and write outputs under
// output_dir. Exit codes: 0 success, 2 config, 3 numerical, 4 io.

#include <rieszflow/config.hpp>
#include <rieszflow/dynamics.hpp>
#include <rieszflow/io.hpp>
#include <rieszflow/jko.hpp>
#include <rieszflow/probe.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

namespace rieszflow {
namespace detail {

// Inverse standard normal CDF: Acklam's rational fit plus one Halley step,
// accurate to machine precision for p away from the denormal range.
inline double probit(double p) {
  require(p > 0.0 && p < 1.0, Err::bad_argument, "probit needs p in (0, 1)");
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
  double x;
  if (p < 0.02425) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p > 1.0 - 0.02425) {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  double err = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  double u = err * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace detail

inline Kernel config_kernel(const RunConfig& c) {
  Domain dom = parse_domain(c.domain);
  auto tok = detail::split_ws(c.kernel);
  if (dom.is_torus()) return Kernel::torus_coulomb(dom.dim);
  if (tok[0] == "coulomb") return Kernel::coulomb(dom.dim);
  if (tok[0] == "energy_distance") return Kernel::energy_distance(dom.dim);
  if (tok[0] == "log") return Kernel::logarithmic(dom.dim);
  double s = 0.0;
  detail::to_double(tok[1], s);
  return Kernel::riesz(s, dom.dim);
}

// Measure described by an init/target value on the configured domain: torus
// specs fill the configured lattice, euclidean specs seed a particle cloud.
inline Measure config_measure(const RunConfig& c, const std::string& spec_str, Rng& rng) {
  Domain dom = parse_domain(c.domain);
  InitSpec sp = parse_init(spec_str);
  if (sp.kind == "file") {
    if (sp.path.size() >= 4 && sp.path.substr(sp.path.size() - 4) == ".csv")
      return Measure(load_particles_csv(sp.path, dom));
    GridMeasure g = load_grid(sp.path);
    require(g.domain == dom, Err::domain_mismatch,
            sp.path + ": grid domain '" + domain_string(g.domain) + "' differs from config '" +
                c.domain + "'");
    return Measure(g);
  }
  if (dom.is_torus()) {
    require(!c.grid.empty(), Err::validation_error,
            "torus measures need a grid shape; set grid=");
    const int d = dom.dim;
    size_t cells = 1;
    for (int n : c.grid) cells *= size_t(n);
    std::vector<double> vals(cells, 1.0);
    if (sp.kind == "cosine") {
      const double two_pi = 2.0 * std::numbers::pi;
      // Profile varies along the first axis only; remaining axes are uniform.
      size_t inner = cells / size_t(c.grid[0]);
      for (size_t f = 0; f < cells; ++f) {
        double x0 = (double(f / inner) + 0.5) / double(c.grid[0]);
        vals[f] = 1.0 + sp.a * std::cos(two_pi * sp.b * x0);
      }
    } else if (sp.kind == "gaussian") {
      // Product of per-axis wrapped bumps centered at the mean coordinate.
      std::vector<int> idx(static_cast<size_t>(d), 0);
      for (size_t f = 0; f < cells; ++f) {
        size_t rem = f;
        for (int ax = d - 1; ax >= 0; --ax) {
          idx[size_t(ax)] = int(rem % size_t(c.grid[size_t(ax)]));
          rem /= size_t(c.grid[size_t(ax)]);
        }
        double v = 1.0;
        for (int ax = 0; ax < d; ++ax) {
          double x = (idx[size_t(ax)] + 0.5) / double(c.grid[size_t(ax)]);
          double u = x - sp.a;
          u -= std::round(u);
          v *= std::exp(-0.5 * u * u / (sp.b * sp.b));
        }
        vals[f] = v;
      }
      // Generated profiles are probability densities; cosine and uniform
      // already integrate to one.
      double m = 0.0;
      for (double v : vals) m += v;
      m /= double(cells);
      for (double& v : vals) v /= m;
    }
    return Measure(GridMeasure::torus(c.grid, std::move(vals)));
  }
  const int d = dom.dim, n = c.n_particles;
  require(n > 0, Err::validation_error, "euclidean measures need n_particles >= 1");
  require(sp.kind != "cosine", Err::validation_error, "cosine profiles live on the torus");
  std::vector<double> pts(size_t(n) * size_t(d));
  if (sp.kind == "gaussian" && d == 1) {
    // Quantile atoms: deterministic, sorted, equal weight.
    for (int i = 0; i < n; ++i) pts[size_t(i)] = sp.a + sp.b * detail::probit((i + 0.5) / n);
  } else if (sp.kind == "gaussian") {
    std::normal_distribution<double> g(0.0, 1.0);
    for (double& x : pts) x = sp.a + sp.b * g(rng);
  } else if (d == 1) {
    // Uniform quantiles on [0, 1].
    for (int i = 0; i < n; ++i) pts[size_t(i)] = (i + 0.5) / n;
  } else {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& x : pts) x = u(rng);
  }
  std::vector<double> w(static_cast<size_t>(n), 1.0 / n);
  return Measure(ParticleMeasure(dom, std::move(pts), std::move(w)));
}

// Atoms at cell centers weighted by cell mass; particles pass through.
inline ParticleMeasure particles_from(const Measure& m) {
  if (const auto* p = std::get_if<ParticleMeasure>(&m)) return *p;
  const GridMeasure& g = std::get<GridMeasure>(m);
  const int d = g.dim();
  std::vector<double> pts, w;
  std::vector<int> idx(static_cast<size_t>(d), 0);
  for (size_t f = 0; f < g.cells(); ++f) {
    size_t rem = f;
    for (int ax = d - 1; ax >= 0; --ax) {
      idx[size_t(ax)] = int(rem % size_t(g.shape[size_t(ax)]));
      rem /= size_t(g.shape[size_t(ax)]);
    }
    double mass = g.values[f] * g.cell_volume;
    if (mass <= 0.0) continue;
    for (int ax = 0; ax < d; ++ax)
      pts.push_back(g.origin[size_t(ax)] + (idx[size_t(ax)] + 0.5) * g.spacing[size_t(ax)]);
    w.push_back(mass);
  }
  return ParticleMeasure(g.domain, std::move(pts), std::move(w));
}

// CFL heuristic when dt is not configured: a fifth of the resolution scale
// over the fastest initial particle, clamped to [1e-6, 1e-2].
inline double auto_dt(const Kernel& k, const FlowState& s, const Measure& nu) {
  std::vector<double> v = lagrangian_rhs(k, s, nu);
  double vmax = 0.0;
  for (double x : v) vmax = std::max(vmax, std::fabs(x));
  double h = detail::median_spacing(sites_of(Measure(s.as_particles())));
  if (h <= 0.0) h = 1e-2;
  return std::clamp(0.2 * h / std::max(vmax, 1e-12), 1e-6, 1e-2);
}

// Lattice analogue of run_flow: semi-Lagrangian steps of the continuity
// equation, recording the spectral energy report on the shared lattice.
inline FlowTrajectory run_eulerian(const Kernel& k, GridMeasure mu, const GridMeasure& nu,
                                   const RunOptions& opt, GridMeasure* final_state = nullptr) {
  require(opt.dt > 0.0 && opt.t_end >= 0.0, Err::bad_argument, "need dt > 0 and t_end >= 0");
  require(opt.record_every >= 1, Err::bad_argument, "record_every must be >= 1");
  FlowTrajectory traj;
  double t = 0.0;
  auto record = [&](const GridMeasure& g) {
    TrajectoryRecord rec;
    rec.t = t;
    rec.energy = pl_report(k, g, nu, t);
    traj.records.push_back(std::move(rec));
  };
  long nsteps = std::lround(std::ceil(opt.t_end / opt.dt - 1e-12));
  try {
    record(mu);
    for (long it = 0; it < nsteps; ++it) {
      double dt = std::min(opt.dt, opt.t_end - t);
      if (dt <= 0.0) break;
      mu = eulerian_step_torus(mu, nu, k, dt);
      t += dt;
      if ((it + 1) % opt.record_every == 0 || it + 1 == nsteps) record(mu);
    }
  } catch (const Error& e) {
    if (e.code == Err::zero_density_cell || e.code == Err::blowup_detected ||
        e.code == Err::mass_drift_exceeded) {
      traj.aborted = true;
      traj.abort_reason = e.what();
    } else {
      throw;
    }
  }
  if (final_state) *final_state = mu;
  return traj;
}

namespace detail {

inline std::string ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  require(!ec, Err::io_error, "cannot create output dir '" + dir + "': " + ec.message());
  return dir;
}

inline std::vector<double> geometric_times(double lo, double hi, int n) {
  std::vector<double> t(static_cast<size_t>(n));
  double ratio = std::pow(hi / lo, 1.0 / (n - 1));
  for (int i = 0; i < n; ++i) t[size_t(i)] = lo * std::pow(ratio, double(i));
  t.back() = hi;
  return t;
}

}  // namespace detail

inline int run_simulate(const RunConfig& c) {
  Kernel k = config_kernel(c);
  Rng rng(static_cast<uint64_t>(c.seed));
  Measure mu0 = config_measure(c, c.init, rng);
  Measure nu = config_measure(c, c.target, rng);
  std::string dir = detail::ensure_dir(c.output_dir);
  RunOptions opt;
  opt.t_end = c.t_end;
  opt.record_every = c.record_every;
  opt.gamma = c.gamma;
  FlowTrajectory traj;
  if (c.scheme == "eulerian") {
    const GridMeasure* g0 = std::get_if<GridMeasure>(&mu0);
    const GridMeasure* gn = std::get_if<GridMeasure>(&nu);
    require(g0 && gn, Err::validation_error, "the eulerian scheme needs lattice measures");
    opt.dt = c.dt > 0.0 ? c.dt : 1e-2;
    GridMeasure final_grid;
    traj = run_eulerian(k, *g0, *gn, opt, &final_grid);
    save_grid(dir + "/final_state", final_grid);
  } else {
    FlowState s;
    if (const GridMeasure* g0 = std::get_if<GridMeasure>(&mu0)) {
      s = flow_from_grid(*g0);
    } else {
      const ParticleMeasure& pm = std::get<ParticleMeasure>(mu0);
      s = flow_from_particles(pm, std::vector<double>(pm.weights.size(), 1.0));
    }
    opt.dt = c.dt > 0.0 ? c.dt : auto_dt(k, s, nu);
    traj = run_flow(k, s, nu, opt);
    if (!traj.records.empty())
      save_particles_csv(dir + "/final_state.csv", traj.records.back().state.as_particles());
  }
  save_trajectory_csv(dir + "/trajectory.csv", traj);
  for (const char* kind : {"energy", "pl", "bounds", "exponent"})
    emit_plotdata(traj, kind, dir, "flow");
  if (traj.aborted) {
    std::fprintf(stderr, "run aborted: %s\n", traj.abort_reason.c_str());
    return 3;
  }
  return 0;
}

inline int run_jko_command(const RunConfig& c) {
  Kernel k = config_kernel(c);
  Rng rng(static_cast<uint64_t>(c.seed));
  ParticleMeasure mu = particles_from(config_measure(c, c.init, rng));
  Measure nu = config_measure(c, c.target, rng);
  std::string dir = detail::ensure_dir(c.output_dir);
  ProxSolver solver = c.solver == "exact" ? ProxSolver::exact : ProxSolver::entropic;
  std::vector<JkoResult> chain = run_jko(k, mu, nu, c.tau, c.steps, solver, c.epsilon);
  save_jko_csv(dir + "/jko.csv", chain);
  save_particles_csv(dir + "/final_state.csv", chain.back().measure);
  if (chain.back().stationary)
    std::fprintf(stderr, "chain stationary after %zu steps\n", chain.size());
  return 0;
}

inline int run_probe(const RunConfig& c) {
  Kernel k = config_kernel(c);
  Rng rng(static_cast<uint64_t>(c.seed));
  Measure mu = config_measure(c, c.init, rng);
  Measure nu = config_measure(c, c.target, rng);
  std::string dir = detail::ensure_dir(c.output_dir);
  std::vector<double> tg = detail::geometric_times(c.t_min, c.t_max, c.t_points);
  if (c.mode == "critical") {
    const GridMeasure* gm = std::get_if<GridMeasure>(&mu);
    const GridMeasure* gn = std::get_if<GridMeasure>(&nu);
    require(gm && gn, Err::validation_error, "mode=critical needs lattice measures");
    LagrangianCriticalReport rep = lagrangian_critical_check(k, *gm, *gn);
    nlohmann::json line = {{"residual", rep.residual},
                           {"witness", rep.witness},
                           {"interior_nonempty", rep.interior_nonempty},
                           {"critical", rep.critical}};
    detail::write_file(dir + "/probe.jsonl", line.dump() + "\n");
    std::printf("%s\n", line.dump().c_str());
    return 0;
  }
  ProbeSummary sum;
  std::vector<double> deriv, cert;
  if (c.mode == "scan") {
    NoLocalMinReport rep = no_local_min_scan(k, mu, nu, tg);
    deriv = rep.curve.derivative_values;
    cert = rep.certificate_rhs;
    sum.t_star = rep.t_star;
    sum.note = rep.note;
  }
  // Both remaining modes fit the small-time exponent; scan keeps its
  // certificate and falls back to the decomposition dimension if the fit
  // has no descent to work with.
  try {
    require(c.t_points >= 4, Err::degenerate_fit, "exponent fit needs t_points >= 4");
    CriticalityReport rep = criticality_exponent(k, mu, nu, tg);
    if (deriv.empty()) deriv = rep.derivative_values;
    sum.delta_hat = rep.delta_hat;
    sum.q_hat = rep.q_hat;
  } catch (const Error& e) {
    if (c.mode == "exponent") throw;
    SignedDecomposition hj = hahn_jordan(mu, nu);
    if (hj.plus_mass() > 1e-9) sum.q_hat = detail::mean_local_dimension(hj.plus);
    sum.note += std::string(sum.note.empty() ? "" : "; ") + "exponent fit unavailable: " + e.what();
  }
  save_probe_jsonl(dir + "/probe.jsonl", tg, deriv, cert, sum);
  std::printf("t_star=%.6g delta_hat=%.6g q_hat=%.6g\n", sum.t_star, sum.delta_hat, sum.q_hat);
  return 0;
}

inline int run_diagnose(const RunConfig& c) {
  Kernel k = config_kernel(c);
  Rng rng(static_cast<uint64_t>(c.seed));
  Measure mu = config_measure(c, c.init, rng);
  Measure nu = config_measure(c, c.target, rng);
  std::string dir = detail::ensure_dir(c.output_dir);
  nlohmann::json j;
  j["domain"] = c.domain;
  j["kernel"] = c.kernel;
  j["mass_init"] = measure_mass(mu);
  j["mass_target"] = measure_mass(nu);
  j["energy"] = mmd_energy(k, mu, nu, DiagonalPolicy::exclude);
  SignedDecomposition hj = hahn_jordan(mu, nu);
  j["plus_mass"] = hj.plus_mass();
  j["minus_mass"] = hj.minus_mass();
  j["dim_init"] = detail::mean_local_dimension(mu);
  j["dim_target"] = detail::mean_local_dimension(nu);
  if (hj.plus_mass() > 1e-9) j["dim_plus"] = detail::mean_local_dimension(hj.plus);
  const GridMeasure* gm = std::get_if<GridMeasure>(&mu);
  const GridMeasure* gn = std::get_if<GridMeasure>(&nu);
  if (gm && gn && gm->same_lattice(*gn) && k.domain.is_torus()) {
    LagrangianCriticalReport rep = lagrangian_critical_check(k, *gm, *gn);
    j["critical"] = {{"residual", rep.residual},
                     {"witness", rep.witness},
                     {"interior_nonempty", rep.interior_nonempty},
                     {"critical", rep.critical}};
  }
  save_json(dir + "/diagnostics.json", j);
  std::printf("%s\n", j.dump(2).c_str());
  return 0;
}

// Table of the interaction kernel and the matching heat kernel over a
// geometric radius grid; printed and saved as CSV.
inline int run_green(const RunConfig& c) {
  Kernel k = config_kernel(c);
  const int d = k.dim();
  std::string dir = detail::ensure_dir(c.output_dir);
  HeatKernelSpec spec{k.domain, 0};
  std::vector<double> radii = detail::geometric_times(1e-3, 0.5, 33);
  std::string csv = "r,green,green_grad,heat_tmin,heat_tmax\n";
  std::printf("%12s %14s %14s %14s %14s\n", "r", "green", "green_grad", "heat_tmin", "heat_tmax");
  for (double r : radii) {
    Vec x(d), y(d);
    y[0] = r;
    double g = eval_kernel(k, x, y);
    double dg = grad_kernel(k, x, y)[0];
    double h1 = heat_kernel(spec, c.t_min, x, y);
    double h2 = heat_kernel(spec, c.t_max, x, y);
    char row[160];
    std::snprintf(row, sizeof row, "%.17g,%.17g,%.17g,%.17g,%.17g\n", r, g, dg, h1, h2);
    csv += row;
    std::printf("%12.5g %14.6g %14.6g %14.6g %14.6g\n", r, g, dg, h1, h2);
  }
  detail::write_file(dir + "/green.csv", csv);
  return 0;
}

inline int exit_code_for(Err e) {
  switch (e) {
    case Err::io_error:
      return 4;
    case Err::parse_error:
    case Err::validation_error:
    case Err::bad_argument:
    case Err::domain_mismatch:
    case Err::lattice_mismatch:
    case Err::torus_unsupported:
      return 2;
    default:
      return 3;
  }
}

inline int dispatch(const RunConfig& c) {
  require(!c.command.empty(), Err::validation_error, "no command; set command= or a subcommand");
  validate_config(c);
  if (c.command == "simulate") return run_simulate(c);
  if (c.command == "jko") return run_jko_command(c);
  if (c.command == "probe") return run_probe(c);
  if (c.command == "diagnose") return run_diagnose(c);
  return run_green(c);
}

// Dispatch with errors folded into the exit-code contract.
inline int dispatch_guarded(const RunConfig& c) {
  try {
    return dispatch(c);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.code);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}

}  // namespace rieszflow
