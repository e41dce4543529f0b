#pragma once
// Run configuration: a strict key=value document (newlines or commas separate
// pairs, '#' starts a comment), the same setter path for flag overrides, and
// a serialized form that reproduces the config exactly.

#include <rieszflow/core.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <string>
#include <vector>

namespace rieszflow {

struct RunConfig {
  std::string command;                // simulate | jko | probe | diagnose | green
  std::string domain = "torus 1";     // "torus d" | "euclidean d"
  std::string kernel = "coulomb";     // coulomb | energy_distance | log | riesz <s>
  std::string scheme = "lagrangian";  // lagrangian | eulerian
  std::vector<int> grid;              // lattice shape, "256" or "64x64"
  int n_particles = 0;                // atom count for euclidean initial data
  double dt = 0.0;                    // time step; 0 = CFL heuristic at startup
  double t_end = 1.0;
  int record_every = 1;
  double gamma = 0.5;                 // Holder exponent tracked by the monitor
  long long seed = 0;
  std::string init = "uniform";       // uniform | cosine [amp [freq]] | gaussian [mean [std]] | file=<path>
  std::string target = "uniform";
  std::string output_dir = ".";
  double tau = 1e-2;                  // proximal step size
  int steps = 10;                     // proximal chain length
  std::string solver = "exact";       // exact | entropic
  double epsilon = 1e-2;              // entropic regularization
  std::string mode = "scan";          // scan | exponent | critical
  double t_min = 1e-3;                // probe time window
  double t_max = 1e-1;
  int t_points = 9;

  bool operator==(const RunConfig&) const = default;
};

// Where a key=value pair came from, for error messages. line 0 = flag override.
struct KvWhere {
  int line = 0;
  int column = 1;
  std::string locate() const {
    if (line <= 0) return "flag override";
    char b[48];
    std::snprintf(b, sizeof b, "line %d, column %d", line, column);
    return b;
  }
};

namespace detail {

inline std::string cfg_trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::string fmt_g(double x) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", x);
  return b;
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool to_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

inline bool to_ll(const std::string& s, long long& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtoll(s.c_str(), &end, 10);
  return end == s.c_str() + s.size();
}

inline double need_double(const std::string& key, const std::string& v, const KvWhere& w) {
  double x;
  require(to_double(v, x), Err::parse_error,
          w.locate() + ": key '" + key + "' expects a real number, got '" + v + "'");
  return x;
}

inline long long need_int(const std::string& key, const std::string& v, const KvWhere& w) {
  long long x;
  require(to_ll(v, x), Err::parse_error,
          w.locate() + ": key '" + key + "' expects an integer, got '" + v + "'");
  return x;
}

inline void need(bool cond, const std::string& key, const std::string& what, const KvWhere& w) {
  require(cond, Err::validation_error, "config key '" + key + "' " + what + " (" + w.locate() + ")");
}

inline bool one_of(const std::string& v, std::initializer_list<const char*> opts) {
  for (const char* o : opts)
    if (v == o) return true;
  return false;
}

}  // namespace detail

// "torus d" / "euclidean d" value grammar shared by configs and grid sidecars.
inline Domain parse_domain(const std::string& s) {
  auto tok = detail::split_ws(s);
  long long d = 0;
  require(tok.size() == 2 && (tok[0] == "torus" || tok[0] == "euclidean") &&
              detail::to_ll(tok[1], d) && d >= 1 && d <= max_dim,
          Err::validation_error,
          "domain must be 'torus d' or 'euclidean d' with 1 <= d <= " + std::to_string(max_dim) +
              ", got '" + s + "'");
  return tok[0] == "torus" ? Domain::torus(int(d)) : Domain::euclidean(int(d));
}

inline std::string domain_string(const Domain& d) {
  return std::string(d.is_torus() ? "torus " : "euclidean ") + std::to_string(d.dim);
}

// Parsed form of an init/target value.
struct InitSpec {
  std::string kind;       // uniform | cosine | gaussian | file
  double a = 0.0;         // cosine amplitude / gaussian mean
  double b = 1.0;         // cosine frequency / gaussian std
  std::string path;       // kind == file
};

inline InitSpec parse_init(const std::string& s) {
  InitSpec sp;
  if (s.rfind("file=", 0) == 0) {
    sp.kind = "file";
    sp.path = s.substr(5);
    require(!sp.path.empty(), Err::validation_error, "file= needs a path");
    return sp;
  }
  auto tok = detail::split_ws(s);
  require(!tok.empty(), Err::validation_error, "empty measure description");
  sp.kind = tok[0];
  if (sp.kind == "uniform") {
    require(tok.size() == 1, Err::validation_error, "uniform takes no arguments");
  } else if (sp.kind == "cosine") {
    sp.a = 0.5;
    sp.b = 1.0;
    require(tok.size() <= 3, Err::validation_error, "cosine takes at most amp and frequency");
    if (tok.size() >= 2)
      require(detail::to_double(tok[1], sp.a) && std::fabs(sp.a) < 1.0, Err::validation_error,
              "cosine amplitude must be a real in (-1, 1)");
    if (tok.size() == 3)
      require(detail::to_double(tok[2], sp.b) && sp.b == std::floor(sp.b) && sp.b >= 1.0,
              Err::validation_error, "cosine frequency must be a positive integer");
  } else if (sp.kind == "gaussian") {
    sp.a = 0.0;
    sp.b = 1.0;
    require(tok.size() <= 3, Err::validation_error, "gaussian takes at most mean and std");
    if (tok.size() >= 2)
      require(detail::to_double(tok[1], sp.a), Err::validation_error,
              "gaussian mean must be a real");
    if (tok.size() == 3)
      require(detail::to_double(tok[2], sp.b) && sp.b > 0.0, Err::validation_error,
              "gaussian std must be positive");
  } else {
    throw Error(Err::validation_error,
                "measure must be uniform, cosine, gaussian, or file=<path>, got '" + s + "'");
  }
  return sp;
}

namespace detail {

// Canonical spelling of a validated value, so serialize(parse(x)) is stable.
inline std::string canon_init(const InitSpec& sp) {
  if (sp.kind == "file") return "file=" + sp.path;
  if (sp.kind == "uniform") return "uniform";
  return sp.kind + " " + fmt_g(sp.a) + " " + fmt_g(sp.b);
}

inline std::string grid_string(const std::vector<int>& g) {
  std::string s;
  for (size_t i = 0; i < g.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(g[i]);
  }
  return s;
}

}  // namespace detail

// Applies one key=value pair; the single setter behind both file parsing and
// CLI flag overrides. Errors carry the source location.
inline void apply_config_kv(RunConfig& c, const std::string& key, const std::string& value,
                            const KvWhere& w = {}) {
  using detail::need;
  using detail::need_double;
  using detail::need_int;
  if (key == "command") {
    need(detail::one_of(value, {"simulate", "jko", "probe", "diagnose", "green"}), key,
         "must be one of simulate|jko|probe|diagnose|green, got '" + value + "'", w);
    c.command = value;
  } else if (key == "domain") {
    c.domain = domain_string(parse_domain(value));
  } else if (key == "kernel") {
    auto tok = detail::split_ws(value);
    if (tok.size() == 1 && detail::one_of(tok[0], {"coulomb", "energy_distance", "log"})) {
      c.kernel = tok[0];
    } else if (tok.size() == 2 && tok[0] == "riesz") {
      double s = need_double(key, tok[1], w);
      need(s != 0.0 && s >= -1.0, key, "riesz exponent must be nonzero and >= -1", w);
      c.kernel = "riesz " + detail::fmt_g(s);
    } else {
      need(false, key, "must be coulomb|energy_distance|log|riesz <s>, got '" + value + "'", w);
    }
  } else if (key == "scheme") {
    need(detail::one_of(value, {"lagrangian", "eulerian"}), key,
         "must be lagrangian or eulerian, got '" + value + "'", w);
    c.scheme = value;
  } else if (key == "grid") {
    std::vector<int> shape;
    size_t i = 0;
    long long cells = 1;
    while (i <= value.size()) {
      size_t j = value.find('x', i);
      std::string tk = value.substr(i, j == std::string::npos ? std::string::npos : j - i);
      long long n = need_int(key, tk, w);
      need(n >= 1 && n <= 1 << 20, key, "axis size must lie in [1, 2^20]", w);
      cells *= n;
      need(cells <= 1 << 24, key, "total cell count must be <= 2^24", w);
      shape.push_back(int(n));
      if (j == std::string::npos) break;
      i = j + 1;
    }
    c.grid = std::move(shape);
  } else if (key == "n_particles") {
    long long n = need_int(key, value, w);
    need(n >= 0 && n <= 10'000'000, key, "must lie in [0, 1e7]", w);
    c.n_particles = int(n);
  } else if (key == "dt") {
    double x = need_double(key, value, w);
    need(x >= 0.0, key, "must be >= 0 (0 = automatic)", w);
    c.dt = x;
  } else if (key == "t_end") {
    double x = need_double(key, value, w);
    need(x >= 0.0, key, "must be >= 0", w);
    c.t_end = x;
  } else if (key == "record_every") {
    long long n = need_int(key, value, w);
    need(n >= 1, key, "must be >= 1", w);
    c.record_every = int(n);
  } else if (key == "gamma") {
    double x = need_double(key, value, w);
    need(x > 0.0 && x <= 1.0, key, "must lie in (0, 1]", w);
    c.gamma = x;
  } else if (key == "seed") {
    c.seed = need_int(key, value, w);
  } else if (key == "init") {
    c.init = detail::canon_init(parse_init(value));
  } else if (key == "target") {
    c.target = detail::canon_init(parse_init(value));
  } else if (key == "output_dir") {
    need(!value.empty(), key, "must be a nonempty path", w);
    c.output_dir = value;
  } else if (key == "tau") {
    double x = need_double(key, value, w);
    need(x > 0.0, key, "must be > 0", w);
    c.tau = x;
  } else if (key == "steps") {
    long long n = need_int(key, value, w);
    need(n >= 1 && n <= 1'000'000, key, "must lie in [1, 1e6]", w);
    c.steps = int(n);
  } else if (key == "solver") {
    need(detail::one_of(value, {"exact", "entropic"}), key,
         "must be exact or entropic, got '" + value + "'", w);
    c.solver = value;
  } else if (key == "epsilon") {
    double x = need_double(key, value, w);
    need(x > 0.0, key, "must be > 0", w);
    c.epsilon = x;
  } else if (key == "mode") {
    need(detail::one_of(value, {"scan", "exponent", "critical"}), key,
         "must be scan, exponent, or critical, got '" + value + "'", w);
    c.mode = value;
  } else if (key == "t_min") {
    double x = need_double(key, value, w);
    need(x > 0.0, key, "must be > 0", w);
    c.t_min = x;
  } else if (key == "t_max") {
    double x = need_double(key, value, w);
    need(x > 0.0, key, "must be > 0", w);
    c.t_max = x;
  } else if (key == "t_points") {
    long long n = need_int(key, value, w);
    need(n >= 2 && n <= 10'000, key, "must lie in [2, 1e4]", w);
    c.t_points = int(n);
  } else {
    throw Error(Err::validation_error, "unknown config key '" + key + "' (" + w.locate() + ")");
  }
}

// Cross-field consistency; rerun after flag overrides.
inline void validate_config(const RunConfig& c) {
  Domain dom = parse_domain(c.domain);
  require(c.t_min < c.t_max, Err::validation_error,
          "config needs t_min < t_max, got [" + detail::fmt_g(c.t_min) + ", " +
              detail::fmt_g(c.t_max) + "]");
  if (!c.grid.empty())
    require(int(c.grid.size()) == dom.dim, Err::validation_error,
            "grid rank " + std::to_string(c.grid.size()) + " does not match domain '" + c.domain +
                "'");
  if (dom.is_torus()) {
    require(c.kernel == "coulomb", Err::validation_error,
            "kernel '" + c.kernel + "' is euclidean-only; the torus uses 'coulomb'");
  } else {
    require(c.scheme != "eulerian", Err::validation_error, "the eulerian scheme is torus-only");
    auto tok = detail::split_ws(c.kernel);
    if (tok[0] == "coulomb")
      require(dom.dim >= 3, Err::validation_error,
              "euclidean coulomb needs d >= 3 (use energy_distance or riesz in low d)");
    if (tok[0] == "log")
      require(dom.dim >= 2, Err::validation_error, "log kernel needs d >= 2");
    if (tok[0] == "riesz") {
      double s = 0.0;
      detail::to_double(tok[1], s);
      require(s <= double(dom.dim - 2), Err::validation_error,
              "riesz exponent must be <= d-2 for d = " + std::to_string(dom.dim));
    }
  }
}

// Strict parse of a config document. Unknown or duplicate keys are fatal;
// malformed pairs and numbers report line and column.
inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::set<std::string> seen;
  int line_no = 0;
  size_t pos = 0;
  for (;;) {
    size_t nl = text.find('\n', pos);
    std::string line =
        text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    size_t fp = 0;
    for (;;) {
      size_t cm = line.find(',', fp);
      size_t fe = cm == std::string::npos ? line.size() : cm;
      size_t f0 = line.find_first_not_of(" \t\r", fp);
      if (f0 != std::string::npos && f0 < fe) {
        std::string frag = detail::cfg_trim(line.substr(f0, fe - f0));
        int col = int(f0) + 1;
        size_t eq = frag.find('=');
        require(eq != std::string::npos && eq > 0, Err::parse_error,
                "line " + std::to_string(line_no) + ", column " + std::to_string(col) +
                    ": expected key=value, got '" + frag + "'");
        std::string key = detail::cfg_trim(frag.substr(0, eq));
        std::string value = detail::cfg_trim(frag.substr(eq + 1));
        KvWhere w{line_no, col + int(eq) + 1};
        require(seen.insert(key).second, Err::validation_error,
                "duplicate config key '" + key + "' (" + w.locate() + ")");
        apply_config_kv(c, key, value, w);
      }
      if (cm == std::string::npos) break;
      fp = cm + 1;
    }
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  validate_config(c);
  return c;
}

// Every field spelled out, one pair per line; parse(serialize(c)) == c.
inline std::string serialize_config(const RunConfig& c) {
  std::string out;
  auto put = [&](const char* k, const std::string& v) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  };
  if (!c.command.empty()) put("command", c.command);
  put("domain", c.domain);
  put("kernel", c.kernel);
  put("scheme", c.scheme);
  if (!c.grid.empty()) put("grid", detail::grid_string(c.grid));
  put("n_particles", std::to_string(c.n_particles));
  put("dt", detail::fmt_g(c.dt));
  put("t_end", detail::fmt_g(c.t_end));
  put("record_every", std::to_string(c.record_every));
  put("gamma", detail::fmt_g(c.gamma));
  put("seed", std::to_string(c.seed));
  put("init", c.init);
  put("target", c.target);
  put("output_dir", c.output_dir);
  put("tau", detail::fmt_g(c.tau));
  put("steps", std::to_string(c.steps));
  put("solver", c.solver);
  put("epsilon", detail::fmt_g(c.epsilon));
  put("mode", c.mode);
  put("t_min", detail::fmt_g(c.t_min));
  put("t_max", detail::fmt_g(c.t_max));
  put("t_points", std::to_string(c.t_points));
  return out;
}

}  // namespace rieszflow
