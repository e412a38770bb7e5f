#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsgd/analysis.hpp"
#include "dsgd/engine.hpp"
#include "dsgd/models.hpp"
#include "dsgd/topology.hpp"

namespace dsgd {

enum class ExperimentKind { Topology, Stability, GenGap, Bound, Compare, ConsensusControl, Gaussianity };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(std::string_view name);

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::Topology;

  TopologyKind kind = TopologyKind::Ring;
  std::size_t m = 16;
  std::optional<std::filesystem::path> matrix_path;
  std::vector<TopologyKind> kinds;  // compare only

  LossFamily family = LossFamily::LinearRegression;
  std::size_t d_x = 20;
  std::size_t hidden = 8;
  double noise_std = 1.0;
  double feature_var = 1.0;
  std::size_t n = 50;

  std::size_t T = 2000;
  double eta = 0.05;
  bool step_decay = false;
  std::size_t snapshot_every = 0;

  std::size_t replicates = 20;
  std::size_t pairs = 8;
  PerturbationMode mode = PerturbationMode::Synchronized;
  std::optional<double> p = 1.0;  // empty = optimise over (0, 100]
  double gamma_sq = 1e-4;
  std::vector<std::size_t> t_gamma;
  std::size_t max_rounds = 100;

  double alpha = 1.0;
  std::size_t holder_pairs = 0;
  double holder_radius = kDefaultHolderRadius;
  std::size_t mc_samples = kDefaultMonteCarloSamples;
  double skew_tol = 0.5;
  double kurt_tol = 1.0;
  bool write_trace = false;

  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;

  /// Checks every constraint of the inner modules; throws InputError naming
  /// the key.
  void validate() const;

  SyntheticTask task() const;
  LossModel model() const;
  TrainConfig train() const;
  StabilityOptions stability_options() const;
  /// Base seed of every replicate stream: hash(seed, experiment name).
  std::uint64_t experiment_seed() const;
};

/// Reads a JSON object, rejects unknown keys, applies defaults, validates.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_json(const nlohmann::json& doc);

/// Resolved configuration with every default filled in.
nlohmann::json to_json(const ExperimentConfig& config);

}  // namespace dsgd
