#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "catchain/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"catchain: coupling bounds, simulation and fitting for categorical chains"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  std::size_t replicas = 0;
  bool quiet = false;

  for (const char* name : {"simulate", "bounds", "verify", "fit"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "run configuration (JSON)")->required();
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out_dir, "overrides the output directory");
    sub->add_option("--replicas", replicas, "overrides verify.replicas");
    sub->add_flag("--quiet", quiet, "suppress the report on stdout");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : catchain::kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const auto* sub = app.get_subcommands().front();
  catchain::RunConfig cfg;
  try {
    cfg = catchain::load_config(config_path);
  } catch (const catchain::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return catchain::kExitConfig;
  }
  if (sub->count("--seed")) cfg.seed = seed;
  if (sub->count("--out")) cfg.output = out_dir;
  if (sub->count("--replicas")) {
    if (replicas == 0) {
      std::cerr << "config error: --replicas must be >= 1\n";
      return catchain::kExitConfig;
    }
    cfg.verify.replicas = replicas;
  }

  std::ostringstream sink;
  std::ostream& log = quiet ? static_cast<std::ostream&>(sink) : std::cout;
  return catchain::run_command(command, cfg, log, std::cerr);
}
