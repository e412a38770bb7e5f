#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dsgd/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Decentralized SGD stability and generalization lab"};
  std::string config_path;
  std::string output_dir;
  std::size_t jobs = 0;
  std::uint64_t seed = 0;
  app.add_option("config", config_path, "Experiment configuration (JSON)")->required();
  auto* out_opt = app.add_option("--output-dir", output_dir, "Directory for CSV, summary and manifest");
  auto* jobs_opt = app.add_option("--jobs", jobs, "Worker threads for replicate runs")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed, "Base seed");
  app.set_version_flag("--version", std::string(dsgd::kToolVersion));
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  dsgd::ExperimentConfig config;
  try {
    config = dsgd::parse_config(config_path);
    if (*out_opt) config.output_dir = output_dir;
    if (*seed_opt) config.seed = seed;
    if (*jobs_opt) {
      config.jobs = jobs;
    } else if (const char* env = std::getenv("DSGD_LAB_JOBS")) {
      try {
        config.jobs = std::stoul(env);
      } catch (const std::exception&) {
        throw dsgd::InputError(std::string("DSGD_LAB_JOBS must be a positive integer (got '") + env + "')");
      }
    }
    config.validate();
  } catch (const dsgd::InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return dsgd::run_experiment(config, std::cerr);
}
