#include "dsgd/engine.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>

namespace dsgd {

Shards::Shards(std::vector<std::vector<Sample>> shards) : shards_(std::move(shards)) {
  if (shards_.empty()) throw InputError("shards: need at least one worker");
  const std::size_t n = shards_.front().size();
  if (n == 0) throw InputError("shards: shards must be non-empty");
  for (const auto& s : shards_)
    if (s.size() != n) throw InputError("shards: all shards must have equal size");
}

std::vector<Sample> Shards::flatten() const {
  std::vector<Sample> out;
  out.reserve(workers() * per_worker());
  for (const auto& s : shards_) out.insert(out.end(), s.begin(), s.end());
  return out;
}

Shards Shards::with_replacement(std::size_t worker, std::size_t index, Sample replacement) const {
  if (worker >= workers() || index >= per_worker())
    throw InputError("shards: replacement position out of range");
  auto copy = shards_;
  copy[worker][index] = std::move(replacement);
  return Shards(std::move(copy));
}

Shards shard_iid(std::span<const Sample> dataset, std::size_t m) {
  if (m == 0) throw InputError("shard_iid: m must be positive");
  if (dataset.empty() || dataset.size() % m != 0)
    throw InputError("shard_iid: dataset size " + std::to_string(dataset.size()) +
                     " is not divisible by m=" + std::to_string(m));
  const std::size_t n = dataset.size() / m;
  std::vector<std::vector<Sample>> shards(m);
  for (std::size_t k = 0; k < m; ++k)
    shards[k].assign(dataset.begin() + static_cast<std::ptrdiff_t>(k * n),
                     dataset.begin() + static_cast<std::ptrdiff_t>((k + 1) * n));
  return Shards(std::move(shards));
}

LearningRate LearningRate::constant(double eta) {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw InputError("learning rate must be finite and >= 0");
  LearningRate lr;
  lr.eta0_ = eta;
  return lr;
}

LearningRate LearningRate::step_decay(double eta0, std::size_t total_steps) {
  LearningRate lr = constant(eta0);
  lr.decay_ = true;
  lr.first_drop_ = (2 * total_steps) / 5;
  lr.second_drop_ = (4 * total_steps) / 5;
  return lr;
}

double LearningRate::at(std::size_t t) const {
  if (!decay_) return eta0_;
  if (t >= second_drop_) return eta0_ / 100.0;
  if (t >= first_drop_) return eta0_ / 10.0;
  return eta0_;
}

std::size_t TrainConfig::snapshot_interval() const {
  if (snapshot_every > 0) return snapshot_every;
  return std::max<std::size_t>(1, T / 200);
}

std::vector<double> consensus_model(const WorkerMatrix& w) {
  std::vector<double> mean(w.cols(), 0.0);
  if (w.rows() == 0) return mean;
  for (std::size_t k = 0; k < w.rows(); ++k) {
    auto row = w.row(k);
    for (std::size_t j = 0; j < w.cols(); ++j) mean[j] += row[j];
  }
  for (auto& v : mean) v /= static_cast<double>(w.rows());
  return mean;
}

double consensus_distance(const WorkerMatrix& w) {
  if (w.rows() == 0) return 0.0;
  const auto mean = consensus_model(w);
  double total = 0.0;
  for (std::size_t k = 0; k < w.rows(); ++k) total += squared_distance(w.row(k), mean);
  return total / static_cast<double>(w.rows());
}

WorkerMatrix gossip(const WorkerMatrix& w, const GossipMatrix& p) {
  if (p.size() != w.rows()) throw InputError("gossip: worker count differs from matrix size");
  return p.entries() * w;
}

WorkerMatrix dsgd_step(const WorkerMatrix& w, const GossipMatrix& p, const Shards& shards,
                       std::span<const std::size_t> zeta, double eta, const LossModel& model) {
  const std::size_t m = w.rows();
  if (p.size() != m || shards.workers() != m || zeta.size() != m)
    throw InputError("dsgd_step: worker counts of W, P, shards and indices differ");
  if (w.cols() != model.dim()) throw InputError("dsgd_step: model dimension mismatch");
  WorkerMatrix next = gossip(w, p);
  if (eta == 0.0) {
    for (std::size_t k = 0; k < m; ++k)
      if (zeta[k] >= shards.per_worker()) throw InputError("dsgd_step: sample index out of range");
    return next;
  }
  std::vector<double> grad(w.cols());
  for (std::size_t k = 0; k < m; ++k) {
    if (zeta[k] >= shards.per_worker()) throw InputError("dsgd_step: sample index out of range");
    model.gradient(w.row(k), shards[k][zeta[k]], grad);
    auto row = next.row(k);
    for (std::size_t j = 0; j < row.size(); ++j) row[j] -= eta * grad[j];
  }
  return next;
}

ControlResult consensus_control_step(WorkerMatrix w, const GossipMatrix& p, double gamma_sq,
                                     std::size_t max_rounds) {
  if (!(gamma_sq > 0.0)) throw InputError("consensus control: gamma_sq must be positive");
  ControlResult out;
  while (consensus_distance(w) > gamma_sq && out.rounds < max_rounds) {
    w = gossip(w, p);
    ++out.rounds;
  }
  out.reached = consensus_distance(w) <= gamma_sq;
  out.models = std::move(w);
  return out;
}

namespace {

Snapshot take_snapshot(std::size_t t, const WorkerMatrix& w, const Shards& shards,
                       const LossModel& model) {
  Snapshot s;
  s.iter = t;
  s.models = w;
  s.consensus = consensus_model(w);
  s.consensus_distance = consensus_distance(w);
  s.worker_risks.resize(w.rows());
  double total = 0.0;
  for (std::size_t k = 0; k < w.rows(); ++k) {
    s.worker_risks[k] = model.empirical_risk(w.row(k), shards[k]);
    total += s.worker_risks[k];
  }
  s.mean_risk = total / static_cast<double>(w.rows());
  return s;
}

}  // namespace

RunTrace run_dsgd_scheduled(const GossipMatrix& p, const Shards& shards, const LossModel& model,
                            const TrainConfig& config, const IndexSchedule& schedule,
                            const std::optional<ConsensusControl>& control) {
  const std::size_t m = p.size();
  if (shards.workers() != m)
    throw InputError("run: shards have " + std::to_string(shards.workers()) +
                     " workers but the gossip matrix has " + std::to_string(m));
  if (control && control->t_gamma > config.T)
    throw InputError("run: t_gamma must satisfy 0 <= t_gamma <= T");
  const std::size_t every = config.snapshot_interval();
  RunTrace trace;
  WorkerMatrix w(m, model.dim());
  std::vector<std::size_t> zeta(m);
  trace.snapshots.push_back(take_snapshot(0, w, shards, model));
  for (std::size_t t = 0; t < config.T; ++t) {
    schedule(t, zeta);
    w = dsgd_step(w, p, shards, zeta, config.eta.at(t), model);
    if (control && t + 1 > control->t_gamma)
      w = consensus_control_step(std::move(w), p, control->gamma_sq, control->max_rounds).models;
    const std::size_t iter = t + 1;
    if (iter % every == 0 || iter == config.T) {
      for (double v : w.data())
        if (!std::isfinite(v))
          throw NumericalError("run diverged: non-finite model at iteration " + std::to_string(iter));
      trace.snapshots.push_back(take_snapshot(iter, w, shards, model));
    }
  }
  trace.final_models = std::move(w);
  return trace;
}

namespace {

IndexSchedule uniform_schedule(std::uint64_t seed, std::size_t n) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  auto dist = std::make_shared<std::uniform_int_distribution<std::size_t>>(0, n - 1);
  return [rng, dist](std::size_t, std::span<std::size_t> zeta) {
    for (auto& z : zeta) z = (*dist)(*rng);
  };
}

}  // namespace

RunTrace run_dsgd(const GossipMatrix& p, const Shards& shards, const LossModel& model,
                  const TrainConfig& config) {
  return run_dsgd_scheduled(p, shards, model, config,
                            uniform_schedule(config.seed, shards.per_worker()));
}

RunTrace run_with_consensus_control(const GossipMatrix& p, const Shards& shards,
                                    const LossModel& model, const TrainConfig& config,
                                    const ConsensusControl& control) {
  return run_dsgd_scheduled(p, shards, model, config,
                            uniform_schedule(config.seed, shards.per_worker()), control);
}

std::string_view to_string(PerturbationMode mode) {
  return mode == PerturbationMode::Synchronized ? "synchronized" : "single_worker";
}

PerturbationMode parse_perturbation_mode(std::string_view name) {
  if (name == "synchronized") return PerturbationMode::Synchronized;
  if (name == "single_worker" || name == "single-worker") return PerturbationMode::SingleWorker;
  throw InputError("unknown perturbation mode '" + std::string(name) + "'");
}

Shards Perturbation::apply(const Shards& shards) const {
  if (index >= shards.per_worker())
    throw InputError("perturbation index " + std::to_string(index) + " outside shard size " +
                     std::to_string(shards.per_worker()));
  if (mode == PerturbationMode::SingleWorker) {
    if (worker >= shards.workers()) throw InputError("perturbation worker out of range");
    if (replacements.size() != 1)
      throw InputError("single-worker perturbation needs exactly one replacement sample");
    return shards.with_replacement(worker, index, replacements.front());
  }
  if (replacements.size() != shards.workers())
    throw InputError("synchronized perturbation needs one replacement sample per worker");
  Shards out = shards;
  for (std::size_t k = 0; k < shards.workers(); ++k)
    out = out.with_replacement(k, index, replacements[k]);
  return out;
}

double CoupledTrace::mean_squared_difference(std::size_t snapshot) const {
  const auto& row = squared_differences.at(snapshot);
  double total = 0.0;
  for (double v : row) total += v;
  return row.empty() ? 0.0 : total / static_cast<double>(row.size());
}

CoupledTrace couple(RunTrace original, RunTrace perturbed) {
  if (original.snapshots.size() != perturbed.snapshots.size() ||
      original.final_models.rows() != perturbed.final_models.rows() ||
      original.final_models.cols() != perturbed.final_models.cols())
    throw InputError("couple: traces do not share a logging grid");
  CoupledTrace out;
  const std::size_t m = original.final_models.rows();
  out.squared_differences.reserve(original.snapshots.size());
  for (std::size_t s = 0; s < original.snapshots.size(); ++s) {
    const auto& a = original.snapshots[s];
    const auto& b = perturbed.snapshots[s];
    if (a.iter != b.iter) throw InputError("couple: traces do not share a logging grid");
    std::vector<double> diffs(m);
    for (std::size_t k = 0; k < m; ++k) diffs[k] = squared_distance(a.models.row(k), b.models.row(k));
    out.squared_differences.push_back(std::move(diffs));
  }
  out.final_differences = original.final_models - perturbed.final_models;
  out.original = std::move(original);
  out.perturbed = std::move(perturbed);
  return out;
}

CoupledTrace run_coupled(const GossipMatrix& p, const Shards& shards, const LossModel& model,
                         const TrainConfig& config, const Perturbation& perturbation,
                         const std::optional<ConsensusControl>& control) {
  const Shards altered = perturbation.apply(shards);
  // Same seed, hence the same index sequence on every worker in both runs.
  auto run = [&](const Shards& data) {
    return run_dsgd_scheduled(p, data, model, config,
                              uniform_schedule(config.seed, data.per_worker()), control);
  };
  return couple(run(shards), run(altered));
}

}  // namespace dsgd
