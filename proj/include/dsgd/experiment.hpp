#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dsgd/config.hpp"
#include "dsgd/report.hpp"

namespace dsgd {

/// Everything an experiment produces before anything touches the disk.
struct ExperimentReport {
  std::vector<std::pair<std::string, Table>> tables;  // file name, content
  nlohmann::json summary;
  nlohmann::json seeds;
};

/// Runs the configured analysis. Throws InputError / NumericalError.
ExperimentReport compute_experiment(const ExperimentConfig& config);

/// Hash of the resolved config, ignoring keys that cannot change results
/// (output_dir, jobs).
std::string config_hash(const ExperimentConfig& config);

/// Writes every table, summary.json and finally manifest.json into
/// config.output_dir. Returns the written paths, manifest last.
std::vector<std::filesystem::path> write_report(const ExperimentReport& report,
                                                const ExperimentConfig& config,
                                                double wall_clock_seconds);

/// compute + write; errors are printed to `err` and mapped to 1 (input) or
/// 2 (numerical).
int run_experiment(const ExperimentConfig& config, std::ostream& err);

}  // namespace dsgd
