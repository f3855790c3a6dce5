// sdelab: command-line front end.
//
//   sdelab <subcommand> --config run.toml [--out DIR] [--seed N] [--threads N] ...

#include <iostream>

#include <CLI11.hpp>

#include "sdelab/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Analysis and simulation of Ito diffusions with locally unbounded drift"};
  app.require_subcommand(1);
  sdelab::cli::Options opt;

  auto common = [&opt](CLI::App* sub) {
    sub->add_option("-c,--config", opt.config, "run configuration file")->required();
    sub->add_option("-o,--out", opt.out, "output directory");
    sub->add_option("--seed", opt.seed, "random seed (overrides [run] seed and SDE_LAB_SEED)");
    sub->add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
  };
  auto mc = [&opt](CLI::App* sub) {
    sub->add_option("--paths", opt.paths, "number of Monte Carlo paths")->check(CLI::PositiveNumber);
    sub->add_option("--step", opt.step, "time step h")->check(CLI::PositiveNumber);
    sub->add_option("--horizon", opt.horizon, "time horizon T")->check(CLI::PositiveNumber);
  };

  const std::vector<std::pair<std::string, std::string>> help = {
      {"check-ellipticity", "eigenvalue bounds of A on regions"},
      {"check-integrability", "local integrability of |G|^p and |grad A|^p"},
      {"check-lyapunov", "non-explosion criteria (c2, c2bis, drift, drift-bis, dual, generalV)"},
      {"solve-density", "stationary density on a box"},
      {"check-divfree", "divergence-free test of the remainder field B"},
      {"recurrence", "volume growth test for recurrence"},
      {"simulate", "Euler-Maruyama paths, explosion and exit statistics"},
      {"verify", "Monte Carlo checks (martingale, qv, driftfunc, invariance, strongconsistency)"},
      {"report", "bundle the JSON reports of an output directory"}};
  for (const auto& [name, text] : help) {
    CLI::App* sub = app.add_subcommand(name, text);
    common(sub);
    sub->callback([&opt, name = name] { opt.command = name; });
    if (name == "check-lyapunov") sub->add_option("--criterion", opt.criterion, "criterion name");
    if (name == "recurrence") sub->add_option("--radius-max", opt.radius_max, "largest ball radius N");
    if (name == "simulate" || name == "verify") {
      mc(sub);
      sub->add_option("--R-max", opt.radius_max, "explosion radius");
    }
    if (name == "verify") sub->add_option("--test", opt.test, "which check to run");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  return sdelab::cli::run(opt, std::cout, std::cerr);
}
