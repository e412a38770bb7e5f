#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "dsgd/engine.hpp"
#include "dsgd/models.hpp"
#include "dsgd/topology.hpp"

namespace dsgd {

/// Task distribution plus the per-worker shard size n.
struct DataSpec {
  SyntheticTask task;
  std::size_t per_worker = 0;
};

/// A curve over logged iterations with one standard error per point.
struct Curve {
  std::vector<std::size_t> iters;
  std::vector<double> mean;
  std::vector<double> se;

  double final_mean() const { return mean.empty() ? 0.0 : mean.back(); }
  double final_se() const { return se.empty() ? 0.0 : se.back(); }
};

// ---------------------------------------------------------------------------
// On-average stability

struct StabilityOptions {
  std::size_t replicates = 20;
  std::size_t pairs = 8;
  PerturbationMode mode = PerturbationMode::Synchronized;
  std::uint64_t base_seed = 0;
  std::size_t jobs = 1;
  std::optional<ConsensusControl> control;
};

/// Mean over perturbations and replicates of (1/m) sum_k ||w_k - w~_k||^2 per
/// logged iteration. Standard errors are taken across replicate means.
struct StabilityEstimate {
  Curve curve;
  std::size_t replicates = 0;
  PerturbationMode mode = PerturbationMode::Synchronized;
};

struct ReplicateRecord {
  std::vector<Sample> dataset;  // full training set S, shard after shard
  RunTrace run;                 // trajectory on S
  std::vector<WorkerMatrix> final_differences;  // one per perturbation
  std::vector<double> stability;                // per logged iteration
};

struct StabilityStudy {
  StabilityEstimate estimate;
  std::vector<ReplicateRecord> replicates;

  std::vector<RunTrace> runs() const;
  std::vector<std::vector<Sample>> datasets() const;
  std::vector<WorkerMatrix> final_differences() const;
};

/// Replicate r draws fresh shards (seed derived from base_seed and r), runs
/// D-SGD on them once and then `pairs` coupled runs on perturbed copies with
/// the same index stream. Synchronized mode replaces index i on every worker;
/// SingleWorker replaces it on one uniformly chosen worker. Replicates run on
/// up to `jobs` threads; results are reduced in replicate order.
StabilityStudy estimate_stability(const GossipMatrix& p, const DataSpec& data,
                                  const LossModel& model, const TrainConfig& config,
                                  const StabilityOptions& options);

/// Exact expectation over every perturbation position and every index
/// sequence (n^(T*m) of them) for fixed shards. `replacements[k]` is the
/// sample substituted on worker k. The standard error is reported as zero.
StabilityEstimate estimate_stability_exhaustive(const GossipMatrix& p, const Shards& shards,
                                                std::span<const Sample> replacements,
                                                const LossModel& model, const TrainConfig& config,
                                                PerturbationMode mode);

// ---------------------------------------------------------------------------
// Constants feeding the bound

struct NoiseEnvelope {
  double sigma_sq = 0.0;
  double mu_sq = 0.0;
};

/// Per worker, per coordinate mean and variance across replicates of the
/// final weight differences; returns (max_k mean variance, max_k ||mu_k||^2/d).
NoiseEnvelope estimate_sigma_mu(std::span<const WorkerMatrix> final_differences);
NoiseEnvelope estimate_sigma_mu(std::span<const CoupledTrace> coupled);

/// F^{2 alpha/(1+alpha)}, with 0^0 = 1.
double risk_power(double risk, double alpha);

/// (1/m) sum_k F_{S_k}(w_k)^{2 alpha/(1+alpha)} per logged iteration.
std::vector<double> averaged_risk_power(const RunTrace& trace, double alpha);

/// Maximum of averaged_risk_power over logged iterations and traces.
double estimate_epsilon_S(std::span<const RunTrace> traces, double alpha);

// ---------------------------------------------------------------------------
// Bound evaluators

struct BoundInputs {
  double L = 1.0;
  double alpha = 1.0;
  LearningRate eta = LearningRate::constant(0.0);
  std::size_t n = 1;
  std::size_t m = 1;
  std::size_t d = 1;
  double lambda = 0.0;
  double sigma_sq = 0.0;
  double mu_sq = 0.0;
  double epsilon_S = 0.0;
  double p = 1.0;
  double grad_at_zero_sup = 0.0;  // only used when alpha == 0

  void validate() const;
  /// C = 2 eta_0 L (1 - 1/n).
  double contraction() const;
  /// (1 - 1/m) lambda^2 + 1/m.
  double topology_factor() const;
  double self_bounding_sq() const;
};

/// Entry t is the bound on the stability of iterate t (t = 0 is the zero
/// initialisation, bound 0):
///   sum_{tau=0}^{t-1} C^{t-1-tau} { [1 + p/n + (1-1/n) eta_tau] d (sigma^2 + mu^2)
///       [(1-1/m) lambda^2 + 1/m] + (2/n)(1 + 1/p) c^2 eta_tau^2 risk_curve[tau] }.
/// risk_curve needs at least t_max entries. Values may overflow to +inf when
/// C > 1. The derivation also needs m >= 1/(d mu_0^2) for a lower bound mu_0
/// on the per-step mean difference; that bound is not estimated, so the
/// condition is left to the caller.
std::vector<double> stability_bound_curve(const BoundInputs& inputs,
                                          std::span<const double> risk_curve, std::size_t t_max);

/// Fixed step, infinite horizon: the geometric sum 1/(1 - C) times the
/// per-step term with risk epsilon_S. Requires C < 1.
double stability_bound_limit(const BoundInputs& inputs);

/// (L / (m n^{1 - alpha/2})) stability^{alpha/2}.
double generalization_bound_from_stability(double stability, double L, double alpha,
                                           std::size_t m, std::size_t n);

/// Two-term generalization bound for the consensus model at iterate t with
/// the explicit constants kept in both terms.
double generalization_bound_closed(const BoundInputs& inputs, std::size_t t);

/// Golden-section search of the free parameter p in (0, 100] minimising the
/// stability bound at iterate t with risk epsilon_S.
double optimize_p(BoundInputs inputs, std::size_t t);

struct BoundEstimateOptions {
  double alpha = 1.0;
  double p = 1.0;
  std::size_t holder_pairs = 0;  // 0 = every sample of the pooled training sets
  double holder_radius = kDefaultHolderRadius;
  std::uint64_t seed = 0;
};

/// Conservative constants from a finished study: L from the largest observed
/// Hoelder ratio over the pooled training samples, sigma^2 and mu^2 from the
/// per-worker envelopes of the final differences, epsilon_S as the maximum
/// averaged risk power over every logged iterate.
BoundInputs conservative_bound_inputs(const StabilityStudy& study, const GossipMatrix& p,
                                      const LossModel& model, const TrainConfig& config,
                                      std::size_t per_worker, const BoundEstimateOptions& options);

// ---------------------------------------------------------------------------
// Generalization gap

/// Per logged iteration F(w_bar) - F_S(w_bar), F_S being the mean loss over
/// the full training set. `datasets` holds either one set shared by every
/// trace or one per trace.
Curve generalization_gap(std::span<const RunTrace> traces, const SyntheticTask& task,
                         const LossModel& model, std::span<const std::vector<Sample>> datasets,
                         std::size_t mc_samples = kDefaultMonteCarloSamples,
                         std::uint64_t mc_seed = 0x5eed);

// ---------------------------------------------------------------------------
// Gaussianity of weight differences

enum class GaussianityVerdict { Pass, Fail, Degenerate };
std::string_view to_string(GaussianityVerdict verdict);

struct WorkerMoments {
  double mean_norm = 0.0;  // ||per-coordinate mean||
  double variance = 0.0;   // per-coordinate variance averaged over coordinates
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

struct HistogramBin {
  double left = 0.0;
  double right = 0.0;
  std::size_t count = 0;
};

struct GaussianityReport {
  std::vector<WorkerMoments> workers;
  std::size_t pooled_count = 0;
  double pooled_mean = 0.0;
  double pooled_variance = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  GaussianityVerdict verdict = GaussianityVerdict::Degenerate;
  std::vector<HistogramBin> histogram;  // 50 bins over the pooled range
};

inline constexpr std::size_t kHistogramBins = 50;

/// Pools every coordinate of every worker's final difference across the
/// inputs. Pass iff |skew| <= skew_tol and |excess kurtosis| <= kurt_tol;
/// zero pooled variance is reported as Degenerate. Needs >= 100 values.
GaussianityReport gaussianity_report(std::span<const WorkerMatrix> final_differences,
                                     double skew_tol = 0.5, double kurt_tol = 1.0);
GaussianityReport gaussianity_report(std::span<const CoupledTrace> coupled,
                                     double skew_tol = 0.5, double kurt_tol = 1.0);

// ---------------------------------------------------------------------------
// Sweeps

/// Spearman rank correlation with average ranks for ties. Returns 0 when
/// either input is constant.
double spearman_correlation(std::span<const double> x, std::span<const double> y);

struct ControlSweepPoint {
  std::size_t t_gamma = 0;
  double stability = 0.0;
  double se = 0.0;
};

struct ControlSweep {
  std::vector<ControlSweepPoint> points;
  double spearman = 0.0;
};

/// Final-iteration stability when both coupled runs keep the consensus
/// distance below gamma_sq after t_gamma, for each t_gamma.
ControlSweep consensus_control_sweep(const GossipMatrix& p, const DataSpec& data,
                                     const LossModel& model, const TrainConfig& config,
                                     double gamma_sq, std::span<const std::size_t> t_gamma_values,
                                     const StabilityOptions& options, std::size_t max_rounds = 100);

struct TopologyRow {
  TopologyKind kind = TopologyKind::FullyConnected;
  double lambda = 0.0;
  StabilityStudy study;
  Curve gap;
};

/// Stability and generalization gap per topology on identical data and
/// index streams (the same base seed for every kind).
std::vector<TopologyRow> topology_comparison(std::span<const TopologyKind> kinds, std::size_t m,
                                             const DataSpec& data, const LossModel& model,
                                             const TrainConfig& config,
                                             const StabilityOptions& options,
                                             std::size_t mc_samples = kDefaultMonteCarloSamples);

}  // namespace dsgd
