#include <CLI11.hpp>

#include <chrono>
#include <iostream>
#include <optional>
#include <string>

#include "ghmnet/experiment.hpp"

namespace ex = ghmnet::experiment;

int main(int argc, char** argv) {
  CLI::App app{"Generative hierarchical models: inference, network approximants, training and diffusion"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  for (const auto& name : ex::task_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " task");
    sub->add_option("--config", config_path, "YAML config file")->required();
    sub->add_option("--out", out_dir, "output directory (overrides the config)");
    sub->add_option("--seed", seed, "global seed (overrides the config)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  const std::string task = app.get_subcommands().front()->get_name();

  try {
    const auto start = std::chrono::steady_clock::now();
    auto config = ex::load_config(config_path, task);
    if (out_dir) config.output = *out_dir;
    if (seed) config.seed = *seed;
    const auto result = ex::run(config);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ex::write_outputs(config, result, config_path, seconds);
    std::cout << "wrote " << config.output << "/results.csv\n";
    return 0;
  } catch (const ghmnet::Error& e) {
    std::cerr << "ghmnet: " << e.what() << "\n";
    return ex::exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "ghmnet: " << e.what() << "\n";
    return 1;
  }
}
