#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "dsgd/common.hpp"
#include "dsgd/models.hpp"
#include "dsgd/topology.hpp"

namespace dsgd {

/// Stacked local models, row k = worker k. Shape m x d.
using WorkerMatrix = Matrix;

/// m shards of n samples each.
class Shards {
 public:
  explicit Shards(std::vector<std::vector<Sample>> shards);

  std::size_t workers() const { return shards_.size(); }
  std::size_t per_worker() const { return shards_.empty() ? 0 : shards_.front().size(); }
  const std::vector<Sample>& operator[](std::size_t k) const { return shards_[k]; }

  /// All samples, shard after shard.
  std::vector<Sample> flatten() const;
  Shards with_replacement(std::size_t worker, std::size_t index, Sample replacement) const;

 private:
  std::vector<std::vector<Sample>> shards_;
};

/// Contiguous partition into m shards of N/m samples; N must be divisible by m.
Shards shard_iid(std::span<const Sample> dataset, std::size_t m);

class LearningRate {
 public:
  static LearningRate constant(double eta);
  /// eta0, divided by 10 at floor(2T/5) and again at floor(4T/5).
  static LearningRate step_decay(double eta0, std::size_t total_steps);

  /// Step size used for the update t -> t+1 (t counted from 0).
  double at(std::size_t t) const;
  double initial() const { return eta0_; }
  bool is_constant() const { return !decay_; }

 private:
  double eta0_ = 0.0;
  bool decay_ = false;
  std::size_t first_drop_ = 0;
  std::size_t second_drop_ = 0;
};

struct TrainConfig {
  std::size_t T = 0;
  LearningRate eta = LearningRate::constant(0.0);
  std::uint64_t seed = 0;
  std::size_t snapshot_every = 0;  // 0 = max(1, T/200)

  std::size_t snapshot_interval() const;
};

struct Snapshot {
  std::size_t iter = 0;  // t = 0 is the zero initialisation
  WorkerMatrix models;
  std::vector<double> consensus;
  double consensus_distance = 0.0;
  std::vector<double> worker_risks;  // F_{S_k}(w_k)
  double mean_risk = 0.0;
};

struct RunTrace {
  std::vector<Snapshot> snapshots;  // every snapshot_interval() steps, plus t = T
  WorkerMatrix final_models;
};

/// Returns the column mean of W.
std::vector<double> consensus_model(const WorkerMatrix& w);
/// (1/m) sum_k ||w_k - mean||^2.
double consensus_distance(const WorkerMatrix& w);

/// One adapt-while-communicate update:
///   w_k' = sum_l P_kl w_l - eta * grad f(w_k; z_{k, zeta_k}).
/// The gradient is taken at the pre-communication model w_k. Indices are
/// 0-based.
WorkerMatrix dsgd_step(const WorkerMatrix& w, const GossipMatrix& p, const Shards& shards,
                       std::span<const std::size_t> zeta, double eta, const LossModel& model);

/// W <- P W only.
WorkerMatrix gossip(const WorkerMatrix& w, const GossipMatrix& p);

struct ConsensusControl {
  double gamma_sq = std::numeric_limits<double>::infinity();
  std::size_t t_gamma = 0;
  std::size_t max_rounds = 100;
};

struct ControlResult {
  WorkerMatrix models;
  std::size_t rounds = 0;
  bool reached = false;
};

/// Repeats W <- P W until consensus_distance(W) <= gamma_sq or max_rounds.
ControlResult consensus_control_step(WorkerMatrix w, const GossipMatrix& p, double gamma_sq,
                                     std::size_t max_rounds);

/// Sampling schedule: fills `zeta` (size m) for the step t -> t+1.
using IndexSchedule = std::function<void(std::size_t t, std::span<std::size_t> zeta)>;

/// Uniform per-worker indices from a stream seeded with config.seed.
RunTrace run_dsgd(const GossipMatrix& p, const Shards& shards, const LossModel& model,
                  const TrainConfig& config);

/// As run_dsgd; for steps producing iterates t+1 > t_gamma a consensus
/// control step follows every update.
RunTrace run_with_consensus_control(const GossipMatrix& p, const Shards& shards,
                                    const LossModel& model, const TrainConfig& config,
                                    const ConsensusControl& control);

/// General driver with an explicit index schedule (used for exhaustive
/// enumeration) and optional consensus control.
RunTrace run_dsgd_scheduled(const GossipMatrix& p, const Shards& shards, const LossModel& model,
                            const TrainConfig& config, const IndexSchedule& schedule,
                            const std::optional<ConsensusControl>& control = std::nullopt);

enum class PerturbationMode { Synchronized, SingleWorker };

std::string_view to_string(PerturbationMode mode);
PerturbationMode parse_perturbation_mode(std::string_view name);

/// Replaces sample `index` (0-based) on the affected workers: every worker
/// for Synchronized, only `worker` for SingleWorker. `replacements` holds one
/// sample per affected worker.
struct Perturbation {
  PerturbationMode mode = PerturbationMode::Synchronized;
  std::size_t worker = 0;
  std::size_t index = 0;
  std::vector<Sample> replacements;

  Shards apply(const Shards& shards) const;
};

struct CoupledTrace {
  RunTrace original;
  RunTrace perturbed;
  /// Per logged iteration, per worker ||w_k - w~_k||^2.
  std::vector<std::vector<double>> squared_differences;
  /// Final w_k - w~_k, one row per worker.
  WorkerMatrix final_differences;

  /// (1/m) sum_k ||w_k - w~_k||^2 at logged iteration `snapshot`.
  double mean_squared_difference(std::size_t snapshot) const;
};

/// Builds the coupled record from two traces that share the logging grid
/// (same T and snapshot cadence).
CoupledTrace couple(RunTrace original, RunTrace perturbed);

/// Runs on S and on the perturbed shards with the same seed, hence identical
/// index sequences on every worker.
CoupledTrace run_coupled(const GossipMatrix& p, const Shards& shards, const LossModel& model,
                         const TrainConfig& config, const Perturbation& perturbation,
                         const std::optional<ConsensusControl>& control = std::nullopt);

}  // namespace dsgd
