#pragma once
// On-disk formats: particle clouds as CSV, lattice densities as native-endian
// float64 with a JSON sidecar, trajectory / proximal-chain CSV, probe JSONL,
// and gnuplot-ready plot data.

#include <rieszflow/config.hpp>
#include <rieszflow/dynamics.hpp>
#include <rieszflow/jko.hpp>
#include <rieszflow/measures.hpp>

#include "json.hpp"

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace rieszflow {
namespace detail {

inline void write_file(const std::string& path, const std::string& body, bool binary = false) {
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  require(f.good(), Err::io_error, "cannot open '" + path + "' for writing");
  f.write(body.data(), std::streamsize(body.size()));
  f.flush();
  require(f.good(), Err::io_error, "short write to '" + path + "'");
}

inline std::string read_file(const std::string& path, bool binary = false) {
  std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
  require(f.good(), Err::io_error, "cannot read '" + path + "'");
  std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  require(!f.bad(), Err::io_error, "read failed on '" + path + "'");
  return body;
}

inline void append_g(std::string& s, double x) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", x);
  s += b;
}

// One CSV data line split on commas into strict doubles.
inline std::vector<double> csv_row(const std::string& line, const std::string& path, int line_no) {
  std::vector<double> row;
  size_t i = 0;
  for (;;) {
    size_t j = line.find(',', i);
    std::string tk =
        cfg_trim(line.substr(i, j == std::string::npos ? std::string::npos : j - i));
    double x;
    require(to_double(tk, x), Err::parse_error,
            path + ": line " + std::to_string(line_no) + ": bad number '" + tk + "'");
    row.push_back(x);
    if (j == std::string::npos) break;
    i = j + 1;
  }
  return row;
}

}  // namespace detail

// --- particle clouds: CSV with header x_1,...,x_d,w -------------------------------

inline void save_particles_csv(const std::string& path, const ParticleMeasure& p) {
  const int d = p.dim(), n = p.size();
  std::string s;
  for (int a = 0; a < d; ++a) s += "x_" + std::to_string(a + 1) + ",";
  s += "w\n";
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < d; ++a) {
      detail::append_g(s, p.points[size_t(i) * size_t(d) + size_t(a)]);
      s += ',';
    }
    detail::append_g(s, p.weights[size_t(i)]);
    s += '\n';
  }
  detail::write_file(path, s);
}

inline ParticleMeasure load_particles_csv(const std::string& path, const Domain& dom) {
  std::string body = detail::read_file(path);
  std::vector<double> pts, w;
  int line_no = 0;
  size_t pos = 0;
  int d = -1;
  while (pos < body.size()) {
    size_t nl = body.find('\n', pos);
    std::string line = detail::cfg_trim(
        body.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos));
    pos = nl == std::string::npos ? body.size() : nl + 1;
    ++line_no;
    if (line.empty()) continue;
    if (d < 0) {
      // Header row fixes the column count.
      int cols = 1;
      for (char ch : line)
        if (ch == ',') ++cols;
      require(cols >= 2 && line.substr(0, 2) == "x_", Err::parse_error,
              path + ": expected header x_1,...,x_d,w");
      d = cols - 1;
      require(d == dom.dim, Err::domain_mismatch,
              path + ": cloud has dimension " + std::to_string(d) + ", domain wants " +
                  std::to_string(dom.dim));
      continue;
    }
    std::vector<double> row = detail::csv_row(line, path, line_no);
    require(int(row.size()) == d + 1, Err::parse_error,
            path + ": line " + std::to_string(line_no) + ": expected " + std::to_string(d + 1) +
                " columns, got " + std::to_string(row.size()));
    for (int a = 0; a < d; ++a) pts.push_back(row[size_t(a)]);
    w.push_back(row.back());
  }
  require(d > 0 && !w.empty(), Err::parse_error, path + ": no particle rows");
  return ParticleMeasure(dom, std::move(pts), std::move(w));
}

// --- lattice densities: <base>.bin (row-major float64) + <base>.json sidecar ------

inline void save_grid(const std::string& base, const GridMeasure& g) {
  nlohmann::json j;
  j["shape"] = g.shape;
  j["cell_volume"] = g.cell_volume;
  j["domain"] = domain_string(g.domain);
  j["origin"] = g.origin;
  j["spacing"] = g.spacing;
  std::string bin(reinterpret_cast<const char*>(g.values.data()),
                  g.values.size() * sizeof(double));
  detail::write_file(base + ".bin", bin, true);
  detail::write_file(base + ".json", j.dump(2) + "\n");
}

inline GridMeasure load_grid(const std::string& base) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(base + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Err::parse_error, base + ".json: " + e.what());
  }
  std::vector<int> shape;
  std::vector<double> origin, spacing;
  double cell_volume = 0.0;
  std::string dom_str;
  try {
    shape = j.at("shape").get<std::vector<int>>();
    cell_volume = j.at("cell_volume").get<double>();
    dom_str = j.at("domain").get<std::string>();
    origin = j.at("origin").get<std::vector<double>>();
    spacing = j.at("spacing").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Err::validation_error, base + ".json: " + e.what());
  }
  Domain dom = parse_domain(dom_str);
  size_t cells = 1;
  for (int n : shape) {
    require(n >= 1, Err::validation_error, base + ".json: shape entries must be positive");
    cells *= size_t(n);
  }
  std::string bin = detail::read_file(base + ".bin", true);
  require(bin.size() == cells * sizeof(double), Err::validation_error,
          base + ".bin holds " + std::to_string(bin.size() / sizeof(double)) +
              " values, sidecar shape wants " + std::to_string(cells));
  std::vector<double> values(cells);
  std::memcpy(values.data(), bin.data(), bin.size());
  GridMeasure g;
  if (dom.is_torus()) {
    g = GridMeasure::torus(shape, std::move(values));
  } else {
    require(!spacing.empty() && origin.size() == shape.size(), Err::validation_error,
            base + ".json: euclidean grids need origin and spacing per axis");
    for (double h : spacing)
      require(std::fabs(h - spacing[0]) <= 1e-12 * spacing[0], Err::validation_error,
              base + ".json: spacing must be isotropic");
    g = GridMeasure::euclidean(shape, std::move(values), std::move(origin), spacing[0]);
  }
  require(std::fabs(g.cell_volume - cell_volume) <= 1e-12 * std::max(1.0, cell_volume),
          Err::validation_error, base + ".json: cell_volume disagrees with shape and spacing");
  return g;
}

// --- trajectory and proximal-chain tables ------------------------------------------

inline void save_trajectory_csv(const std::string& path, const FlowTrajectory& traj) {
  require(!traj.records.empty(), Err::bad_argument, "refusing to write an empty trajectory");
  std::string s = "t,energy,grad_norm_sq,pl_ratio,min_f,max_f,sup_dv,holder_mu,support_radius\n";
  for (const TrajectoryRecord& r : traj.records) {
    detail::append_g(s, r.t);
    s += ',';
    detail::append_g(s, r.energy.energy);
    s += ',';
    detail::append_g(s, r.energy.grad_norm_sq);
    s += ',';
    detail::append_g(s, r.energy.pl_ratio);
    s += ',';
    detail::append_g(s, r.energy.min_density);
    s += ',';
    detail::append_g(s, r.energy.max_density);
    s += ',';
    detail::append_g(s, r.regularity.sup_dv);
    s += ',';
    detail::append_g(s, r.regularity.holder_mu);
    s += ',';
    detail::append_g(s, r.regularity.support_radius);
    s += '\n';
  }
  detail::write_file(path, s);
}

inline void save_jko_csv(const std::string& path, const std::vector<JkoResult>& chain) {
  require(!chain.empty(), Err::bad_argument, "refusing to write an empty proximal chain");
  std::string s = "step,energy,w2_cost,proximal_value\n";
  for (size_t i = 0; i < chain.size(); ++i) {
    s += std::to_string(i + 1);
    s += ',';
    detail::append_g(s, chain[i].energy);
    s += ',';
    detail::append_g(s, chain[i].w2_sq);
    s += ',';
    detail::append_g(s, chain[i].proximal_value);
    s += '\n';
  }
  detail::write_file(path, s);
}

// --- probe JSONL --------------------------------------------------------------------

struct ProbeSummary {
  double t_star = 0.0;
  double delta_hat = 0.0;
  double q_hat = 0.0;
  std::string note;
};

// One record per probe time; certificate columns are null when the mode did
// not certify descent. The last line carries the summary.
inline void save_probe_jsonl(const std::string& path, const std::vector<double>& t_grid,
                             const std::vector<double>& derivative,
                             const std::vector<double>& certificate_rhs,
                             const ProbeSummary& sum) {
  require(t_grid.size() == derivative.size(), Err::bad_argument,
          "probe jsonl needs one derivative per time");
  require(certificate_rhs.empty() || certificate_rhs.size() == t_grid.size(), Err::bad_argument,
          "probe jsonl certificate length mismatch");
  std::string s;
  for (size_t i = 0; i < t_grid.size(); ++i) {
    nlohmann::json rec;
    rec["t"] = t_grid[i];
    rec["derivative"] = derivative[i];
    rec["certificate_lhs"] = derivative[i];
    if (certificate_rhs.empty())
      rec["certificate_rhs"] = nullptr;
    else
      rec["certificate_rhs"] = certificate_rhs[i];
    s += rec.dump();
    s += '\n';
  }
  nlohmann::json tail;
  tail["summary"] = {{"t_star", sum.t_star},
                     {"delta_hat", sum.delta_hat},
                     {"q_hat", sum.q_hat},
                     {"note", sum.note}};
  s += tail.dump();
  s += '\n';
  detail::write_file(path, s);
}

inline void save_json(const std::string& path, const nlohmann::json& j) {
  detail::write_file(path, j.dump(2) + "\n");
}

// --- plot data ----------------------------------------------------------------------

// Two-column CSV per kind plus a gnuplot stub; "energy" adds a log column for
// rate fits, "exponent" differentiates log energy between adjacent records.
// Nothing touches the disk when the trajectory is empty or the kind unknown.
inline std::vector<std::string> emit_plotdata(const FlowTrajectory& traj, const std::string& kind,
                                              const std::string& out_dir,
                                              const std::string& stem = "flow") {
  require(!traj.records.empty(), Err::bad_argument, "empty trajectory: nothing to plot");
  require(detail::one_of(kind, {"energy", "pl", "bounds", "exponent"}), Err::validation_error,
          "plot kind must be energy|pl|bounds|exponent, got '" + kind + "'");
  auto path = [&](const std::string& leaf) { return out_dir + "/" + stem + "_" + leaf; };
  std::vector<std::pair<std::string, std::string>> files;
  std::string gp = "# gnuplot stub\nset datafile separator ','\nset key autotitle columnhead\n";
  auto two_col = [&](const std::string& leaf, const char* header, auto&& rows) {
    std::string s = std::string(header) + "\n";
    rows(s);
    files.emplace_back(path(leaf), std::move(s));
  };
  if (kind == "energy") {
    two_col("energy.csv", "t,energy", [&](std::string& s) {
      for (const auto& r : traj.records) {
        detail::append_g(s, r.t);
        s += ',';
        detail::append_g(s, r.energy.energy);
        s += '\n';
      }
    });
    two_col("energy_log.csv", "t,log_energy", [&](std::string& s) {
      for (const auto& r : traj.records)
        if (r.energy.energy > 0.0) {
          detail::append_g(s, r.t);
          s += ',';
          detail::append_g(s, std::log(r.energy.energy));
          s += '\n';
        }
    });
    gp += "set logscale y\nplot '" + stem + "_energy.csv' using 1:2 with lines\n";
  } else if (kind == "pl") {
    two_col("pl.csv", "t,pl_ratio", [&](std::string& s) {
      for (const auto& r : traj.records) {
        detail::append_g(s, r.t);
        s += ',';
        detail::append_g(s, r.energy.pl_ratio);
        s += '\n';
      }
    });
    gp += "plot '" + stem + "_pl.csv' using 1:2 with lines\n";
  } else if (kind == "bounds") {
    two_col("bounds_min.csv", "t,min_f", [&](std::string& s) {
      for (const auto& r : traj.records) {
        detail::append_g(s, r.t);
        s += ',';
        detail::append_g(s, r.energy.min_density);
        s += '\n';
      }
    });
    two_col("bounds_max.csv", "t,max_f", [&](std::string& s) {
      for (const auto& r : traj.records) {
        detail::append_g(s, r.t);
        s += ',';
        detail::append_g(s, r.energy.max_density);
        s += '\n';
      }
    });
    gp += "plot '" + stem + "_bounds_min.csv' using 1:2 with lines, '" + stem +
          "_bounds_max.csv' using 1:2 with lines\n";
  } else {
    two_col("exponent.csv", "t,decay_rate", [&](std::string& s) {
      for (size_t i = 0; i + 1 < traj.records.size(); ++i) {
        const auto& a = traj.records[i];
        const auto& b = traj.records[i + 1];
        if (a.energy.energy > 0.0 && b.energy.energy > 0.0 && b.t > a.t) {
          detail::append_g(s, 0.5 * (a.t + b.t));
          s += ',';
          detail::append_g(s, -(std::log(b.energy.energy) - std::log(a.energy.energy)) /
                                  (b.t - a.t));
          s += '\n';
        }
      }
    });
    gp += "plot '" + stem + "_exponent.csv' using 1:2 with lines\n";
  }
  files.emplace_back(path(kind + ".gp"), std::move(gp));
  std::vector<std::string> written;
  for (auto& [p, body] : files) {
    detail::write_file(p, body);
    written.push_back(p);
  }
  return written;
}

}  // namespace rieszflow
