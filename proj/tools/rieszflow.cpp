// CLI front end: subcommand + optional config file + flag overrides, all
// routed through the same strict key=value setter. Exit codes: 0 success,
// 2 config error, 3 numerical abort, 4 io error.

#include <rieszflow/rieszflow.hpp>

#include "CLI11.hpp"

#include <cstdio>
#include <string>
#include <utility>
#include <vector>

int main(int argc, char** argv) {
  CLI::App app{
      "rieszflow: Wasserstein gradient flows of Riesz-kernel interaction "
      "energies on R^d and the flat torus"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::pair<std::string, std::string>> overrides;
  auto bind = [&overrides](CLI::App* s, const std::string& flag, std::string key,
                           const char* help) {
    s->add_option_function<std::string>(
        flag, [&overrides, key = std::move(key)](const std::string& v) {
          overrides.emplace_back(key, v);
        },
        help);
  };
  auto add_common = [&](CLI::App* s) {
    s->add_option("-c,--config", config_path, "config file: key=value lines, '#' comments");
    bind(s, "--domain", "domain", "'torus d' or 'euclidean d' [torus 1]");
    bind(s, "--kernel", "kernel", "coulomb | energy_distance | log | 'riesz s' [coulomb]");
    bind(s, "--grid", "grid", "lattice shape, e.g. 256 or 64x64");
    bind(s, "--n-particles", "n_particles", "atom count for euclidean initial data [0]");
    bind(s, "--seed", "seed", "RNG seed driving every random draw [0]");
    bind(s, "--init", "init", "uniform | 'cosine amp freq' | 'gaussian mean std' | file=<path>");
    bind(s, "--target", "target", "target measure, same grammar as --init [uniform]");
    bind(s, "--output-dir", "output_dir", "directory for all output files [.]");
    return s;
  };

  CLI::App* sim = add_common(app.add_subcommand("simulate", "integrate the gradient flow"));
  bind(sim, "--scheme", "scheme", "lagrangian | eulerian [lagrangian]");
  bind(sim, "--dt", "dt", "time step; 0 picks a CFL heuristic [0]");
  bind(sim, "--t-end", "t_end", "final time [1]");
  bind(sim, "--record-every", "record_every", "steps between records [1]");
  bind(sim, "--gamma", "gamma", "Holder exponent tracked by the monitor [0.5]");

  CLI::App* jko = add_common(app.add_subcommand("jko", "minimizing-movement proximal chain"));
  bind(jko, "--tau", "tau", "proximal step size [0.01]");
  bind(jko, "--steps", "steps", "chain length [10]");
  bind(jko, "--solver", "solver", "exact | entropic [exact]");
  bind(jko, "--epsilon", "epsilon", "entropic regularization [0.01]");

  CLI::App* probe = add_common(app.add_subcommand("probe", "heat-probe descent diagnostics"));
  bind(probe, "--mode", "mode", "scan | exponent | critical [scan]");
  bind(probe, "--t-min", "t_min", "smallest probe time [1e-3]");
  bind(probe, "--t-max", "t_max", "largest probe time [0.1]");
  bind(probe, "--t-points", "t_points", "geometric grid size [9]");

  add_common(app.add_subcommand("diagnose", "static report on the configured measures"));

  CLI::App* green = add_common(
      app.add_subcommand("green", "print Green / heat kernel tables for the kernel"));
  bind(green, "--t-min", "t_min", "heat time for the first table column [1e-3]");
  bind(green, "--t-max", "t_max", "heat time for the second table column [0.1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string sub = app.get_subcommands().front()->get_name();
  rieszflow::RunConfig cfg;
  try {
    if (!config_path.empty())
      cfg = rieszflow::parse_config(rieszflow::detail::read_file(config_path));
    if (cfg.command.empty())
      cfg.command = sub;
    else
      rieszflow::require(cfg.command == sub, rieszflow::Err::validation_error,
                         "config command '" + cfg.command + "' conflicts with subcommand '" +
                             sub + "'");
    for (const auto& [key, value] : overrides) rieszflow::apply_config_kv(cfg, key, value);
  } catch (const rieszflow::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return rieszflow::exit_code_for(e.code);
  }
  return rieszflow::dispatch_guarded(cfg);
}
