#include "dsgd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "dsgd/parallel.hpp"

namespace dsgd {

namespace {

Curve curve_from_rows(const std::vector<std::size_t>& iters,
                      const std::vector<std::vector<double>>& rows) {
  Curve c;
  c.iters = iters;
  c.mean.resize(iters.size());
  c.se.resize(iters.size());
  std::vector<double> column(rows.size());
  for (std::size_t s = 0; s < iters.size(); ++s) {
    for (std::size_t r = 0; r < rows.size(); ++r) column[r] = rows[r].at(s);
    const auto stats = mean_and_se(column);
    c.mean[s] = stats.mean;
    c.se[s] = stats.se;
  }
  return c;
}

std::vector<std::size_t> logged_iters(const RunTrace& trace) {
  std::vector<std::size_t> iters;
  iters.reserve(trace.snapshots.size());
  for (const auto& s : trace.snapshots) iters.push_back(s.iter);
  return iters;
}

// (1/m) sum_k ||a_k - b_k||^2 per logged iteration.
std::vector<double> mean_squared_differences(const RunTrace& a, const RunTrace& b) {
  std::vector<double> out(a.snapshots.size());
  for (std::size_t s = 0; s < out.size(); ++s) {
    const auto& wa = a.snapshots[s].models;
    const auto& wb = b.snapshots[s].models;
    double total = 0.0;
    for (std::size_t k = 0; k < wa.rows(); ++k) total += squared_distance(wa.row(k), wb.row(k));
    out[s] = total / static_cast<double>(wa.rows());
  }
  return out;
}

RunTrace run_uniform(const GossipMatrix& p, const Shards& shards, const LossModel& model,
                     const TrainConfig& config, const std::optional<ConsensusControl>& control) {
  if (control) return run_with_consensus_control(p, shards, model, config, *control);
  return run_dsgd(p, shards, model, config);
}

}  // namespace

std::vector<RunTrace> StabilityStudy::runs() const {
  std::vector<RunTrace> out;
  out.reserve(replicates.size());
  for (const auto& r : replicates) out.push_back(r.run);
  return out;
}

std::vector<std::vector<Sample>> StabilityStudy::datasets() const {
  std::vector<std::vector<Sample>> out;
  out.reserve(replicates.size());
  for (const auto& r : replicates) out.push_back(r.dataset);
  return out;
}

std::vector<WorkerMatrix> StabilityStudy::final_differences() const {
  std::vector<WorkerMatrix> out;
  for (const auto& r : replicates)
    out.insert(out.end(), r.final_differences.begin(), r.final_differences.end());
  return out;
}

StabilityStudy estimate_stability(const GossipMatrix& p, const DataSpec& data,
                                  const LossModel& model, const TrainConfig& config,
                                  const StabilityOptions& options) {
  if (options.replicates < 2) throw InputError("stability: need at least 2 replicates");
  if (options.pairs < 1) throw InputError("stability: need at least 1 perturbation per replicate");
  if (data.per_worker < 1) throw InputError("stability: per-worker shard size must be positive");
  if (model.dim() != data.task.model_dim())
    throw InputError("stability: loss model and task disagree on the model dimension");
  const std::size_t m = p.size();
  const std::size_t n = data.per_worker;

  StabilityStudy study;
  study.replicates.resize(options.replicates);
  parallel_for(options.replicates, options.jobs, [&](std::size_t r) {
    ReplicateRecord& rec = study.replicates[r];
    rec.dataset = sample_dataset(data.task, m * n, derive_seed(options.base_seed, "data", r));
    const Shards shards = shard_iid(rec.dataset, m);
    TrainConfig cfg = config;
    cfg.seed = derive_seed(options.base_seed, "run", r);
    rec.run = run_uniform(p, shards, model, cfg, options.control);

    const auto fresh = sample_dataset(data.task, options.pairs * m,
                                      derive_seed(options.base_seed, "replacement", r));
    std::mt19937_64 rng(derive_seed(options.base_seed, "perturbation", r));
    std::uniform_int_distribution<std::size_t> pick_index(0, n - 1);
    std::uniform_int_distribution<std::size_t> pick_worker(0, m - 1);

    rec.stability.assign(rec.run.snapshots.size(), 0.0);
    for (std::size_t j = 0; j < options.pairs; ++j) {
      Perturbation pert;
      pert.mode = options.mode;
      pert.index = pick_index(rng);
      if (options.mode == PerturbationMode::Synchronized) {
        pert.replacements.assign(fresh.begin() + static_cast<std::ptrdiff_t>(j * m),
                                 fresh.begin() + static_cast<std::ptrdiff_t>((j + 1) * m));
      } else {
        pert.worker = pick_worker(rng);
        pert.replacements = {fresh[j * m]};
      }
      const RunTrace other = run_uniform(p, pert.apply(shards), model, cfg, options.control);
      const auto diffs = mean_squared_differences(rec.run, other);
      for (std::size_t s = 0; s < diffs.size(); ++s)
        rec.stability[s] += diffs[s] / static_cast<double>(options.pairs);
      rec.final_differences.push_back(rec.run.final_models - other.final_models);
    }
  });

  std::vector<std::vector<double>> rows;
  rows.reserve(study.replicates.size());
  for (const auto& rec : study.replicates) rows.push_back(rec.stability);
  study.estimate.curve = curve_from_rows(logged_iters(study.replicates.front().run), rows);
  study.estimate.replicates = options.replicates;
  study.estimate.mode = options.mode;
  return study;
}

StabilityEstimate estimate_stability_exhaustive(const GossipMatrix& p, const Shards& shards,
                                                std::span<const Sample> replacements,
                                                const LossModel& model, const TrainConfig& config,
                                                PerturbationMode mode) {
  const std::size_t m = shards.workers();
  const std::size_t n = shards.per_worker();
  if (replacements.size() != m)
    throw InputError("exhaustive stability: need one replacement sample per worker");
  const std::size_t digits = config.T * m;
  double sequences = std::pow(static_cast<double>(n), static_cast<double>(digits));
  if (sequences > static_cast<double>(1u << 24))
    throw InputError("exhaustive stability: n^(T*m) exceeds 2^24 index sequences");
  const auto count = static_cast<std::size_t>(sequences);

  std::vector<Perturbation> perturbations;
  for (std::size_t i = 0; i < n; ++i) {
    if (mode == PerturbationMode::Synchronized) {
      perturbations.push_back({mode, 0, i, {replacements.begin(), replacements.end()}});
    } else {
      for (std::size_t k = 0; k < m; ++k) perturbations.push_back({mode, k, i, {replacements[k]}});
    }
  }

  std::vector<double> total;
  std::vector<std::size_t> iters;
  for (std::size_t seq = 0; seq < count; ++seq) {
    IndexSchedule schedule = [seq, n, m](std::size_t t, std::span<std::size_t> zeta) {
      std::size_t code = seq;
      for (std::size_t skip = 0; skip < t * m; ++skip) code /= n;
      for (std::size_t k = 0; k < m; ++k) {
        zeta[k] = code % n;
        code /= n;
      }
    };
    const RunTrace base = run_dsgd_scheduled(p, shards, model, config, schedule);
    if (total.empty()) {
      total.assign(base.snapshots.size(), 0.0);
      iters = logged_iters(base);
    }
    for (const auto& pert : perturbations) {
      const RunTrace other = run_dsgd_scheduled(p, pert.apply(shards), model, config, schedule);
      const auto diffs = mean_squared_differences(base, other);
      for (std::size_t s = 0; s < diffs.size(); ++s) total[s] += diffs[s];
    }
  }

  StabilityEstimate est;
  est.mode = mode;
  est.replicates = count * perturbations.size();
  est.curve.iters = iters;
  est.curve.mean.resize(total.size());
  est.curve.se.assign(total.size(), 0.0);
  for (std::size_t s = 0; s < total.size(); ++s)
    est.curve.mean[s] = total[s] / static_cast<double>(est.replicates);
  return est;
}

NoiseEnvelope estimate_sigma_mu(std::span<const WorkerMatrix> diffs) {
  if (diffs.size() < 2) throw InputError("estimate_sigma_mu: need at least 2 coupled traces");
  const std::size_t m = diffs.front().rows();
  const std::size_t d = diffs.front().cols();
  for (const auto& w : diffs)
    if (w.rows() != m || w.cols() != d) throw InputError("estimate_sigma_mu: shapes differ");
  const double count = static_cast<double>(diffs.size());
  NoiseEnvelope out;
  for (std::size_t k = 0; k < m; ++k) {
    double mean_sq_norm = 0.0;
    double mean_var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (const auto& w : diffs) mean += w(k, j);
      mean /= count;
      double ss = 0.0;
      for (const auto& w : diffs) ss += (w(k, j) - mean) * (w(k, j) - mean);
      mean_sq_norm += mean * mean;
      mean_var += ss / (count - 1.0);
    }
    out.mu_sq = std::max(out.mu_sq, mean_sq_norm / static_cast<double>(d));
    out.sigma_sq = std::max(out.sigma_sq, mean_var / static_cast<double>(d));
  }
  return out;
}

NoiseEnvelope estimate_sigma_mu(std::span<const CoupledTrace> coupled) {
  std::vector<WorkerMatrix> diffs;
  diffs.reserve(coupled.size());
  for (const auto& c : coupled) diffs.push_back(c.final_differences);
  return estimate_sigma_mu(diffs);
}

double risk_power(double risk, double alpha) {
  const double exponent = 2.0 * alpha / (1.0 + alpha);
  if (exponent == 0.0) return 1.0;
  return std::pow(std::max(risk, 0.0), exponent);
}

std::vector<double> averaged_risk_power(const RunTrace& trace, double alpha) {
  std::vector<double> out;
  out.reserve(trace.snapshots.size());
  for (const auto& s : trace.snapshots) {
    double total = 0.0;
    for (double f : s.worker_risks) total += risk_power(f, alpha);
    out.push_back(s.worker_risks.empty() ? 0.0 : total / static_cast<double>(s.worker_risks.size()));
  }
  return out;
}

double estimate_epsilon_S(std::span<const RunTrace> traces, double alpha) {
  if (traces.empty()) throw InputError("estimate_epsilon_S: no traces");
  double best = 0.0;
  for (const auto& t : traces)
    for (double v : averaged_risk_power(t, alpha)) best = std::max(best, v);
  return best;
}

void BoundInputs::validate() const {
  if (!(L > 0.0)) throw InputError("bound: L must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("bound: alpha must lie in [0, 1]");
  if (n < 1 || m < 1 || d < 1) throw InputError("bound: n, m and d must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InputError("bound: lambda must lie in [0, 1]");
  if (!(sigma_sq >= 0.0) || !(mu_sq >= 0.0) || !(epsilon_S >= 0.0))
    throw InputError("bound: sigma^2, mu^2 and epsilon_S must be >= 0");
  if (!(p > 0.0)) throw InputError("bound: p must be positive");
}

double BoundInputs::contraction() const {
  return 2.0 * eta.initial() * L * (1.0 - 1.0 / static_cast<double>(n));
}

double BoundInputs::topology_factor() const {
  const double inv_m = 1.0 / static_cast<double>(m);
  return (1.0 - inv_m) * lambda * lambda + inv_m;
}

double BoundInputs::self_bounding_sq() const {
  const double c = c_alpha_constant(alpha, L, grad_at_zero_sup);
  return c * c;
}

namespace {

struct StepTerms {
  double decentralization = 0.0;  // [1 + p/n + (1-1/n) eta] d (sigma^2+mu^2) topo
  double averaging = 0.0;         // 2 (1 + 1/p) c^2 eta^2, to be multiplied by the risk
};

StepTerms step_terms(const BoundInputs& in, double eta) {
  const double n = static_cast<double>(in.n);
  StepTerms s;
  s.decentralization = (1.0 + in.p / n + (1.0 - 1.0 / n) * eta) * static_cast<double>(in.d) *
                       (in.sigma_sq + in.mu_sq) * in.topology_factor();
  s.averaging = 2.0 * (1.0 + 1.0 / in.p) * in.self_bounding_sq() * eta * eta;
  return s;
}

// acc <- C acc + term, without forming 0 * inf.
double accumulate(double acc, double c, double term) {
  return (c == 0.0 ? 0.0 : c * acc) + term;
}

}  // namespace

std::vector<double> stability_bound_curve(const BoundInputs& inputs,
                                          std::span<const double> risk_curve, std::size_t t_max) {
  inputs.validate();
  if (risk_curve.size() < t_max)
    throw InputError("stability_bound_curve: risk curve shorter than the horizon");
  const double c = inputs.contraction();
  const double inv_n = 1.0 / static_cast<double>(inputs.n);
  std::vector<double> out(t_max + 1, 0.0);
  double acc = 0.0;
  for (std::size_t t = 1; t <= t_max; ++t) {
    const std::size_t tau = t - 1;
    const auto terms = step_terms(inputs, inputs.eta.at(tau));
    acc = accumulate(acc, c, terms.decentralization + inv_n * terms.averaging * risk_curve[tau]);
    out[t] = acc;
  }
  return out;
}

double stability_bound_limit(const BoundInputs& inputs) {
  inputs.validate();
  const double c = inputs.contraction();
  if (c >= 1.0)
    throw InputError("stability_bound_limit: C = 2 eta L (1 - 1/n) >= 1, the geometric sum diverges");
  const auto terms = step_terms(inputs, inputs.eta.initial());
  return (terms.decentralization +
          terms.averaging * inputs.epsilon_S / static_cast<double>(inputs.n)) /
         (1.0 - c);
}

double generalization_bound_from_stability(double stability, double L, double alpha,
                                           std::size_t m, std::size_t n) {
  if (!(stability >= 0.0)) throw InputError("generalization bound: stability must be >= 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("generalization bound: alpha must lie in [0, 1]");
  if (m < 1 || n < 1) throw InputError("generalization bound: m and n must be positive");
  const double scale =
      L / (static_cast<double>(m) * std::pow(static_cast<double>(n), 1.0 - alpha / 2.0));
  return scale * (alpha == 0.0 ? 1.0 : std::pow(stability, alpha / 2.0));
}

double generalization_bound_closed(const BoundInputs& inputs, std::size_t t) {
  inputs.validate();
  const double c = inputs.contraction();
  double averaging = 0.0;
  double decentralization = 0.0;
  for (std::size_t tau = 0; tau < t; ++tau) {
    const auto terms = step_terms(inputs, inputs.eta.at(tau));
    averaging = accumulate(averaging, c, terms.averaging * inputs.epsilon_S);
    decentralization = accumulate(decentralization, c, terms.decentralization);
  }
  const double half = inputs.alpha / 2.0;
  const double big_n = static_cast<double>(inputs.n * inputs.m);
  auto power = [half](double v) { return half == 0.0 ? 1.0 : std::pow(v, half); };
  return inputs.L / big_n * power(averaging) +
         inputs.L * std::pow(static_cast<double>(inputs.n), half) / big_n * power(decentralization);
}

double optimize_p(BoundInputs inputs, std::size_t t) {
  inputs.validate();
  const std::vector<double> risk(t, inputs.epsilon_S);
  auto objective = [&](double p) {
    inputs.p = p;
    return stability_bound_curve(inputs, risk, t).back();
  };
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 1e-6;
  double hi = 100.0;
  double x1 = hi - ratio * (hi - lo);
  double x2 = lo + ratio * (hi - lo);
  double f1 = objective(x1);
  double f2 = objective(x2);
  for (int iter = 0; iter < 200 && hi - lo > 1e-9 * (1.0 + hi); ++iter) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - ratio * (hi - lo);
      f1 = objective(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + ratio * (hi - lo);
      f2 = objective(x2);
    }
  }
  return 0.5 * (lo + hi);
}

BoundInputs conservative_bound_inputs(const StabilityStudy& study, const GossipMatrix& p,
                                      const LossModel& model, const TrainConfig& config,
                                      std::size_t per_worker, const BoundEstimateOptions& options) {
  if (study.replicates.empty()) throw InputError("bound: empty stability study");
  std::vector<Sample> pool;
  for (const auto& rec : study.replicates) pool.insert(pool.end(), rec.dataset.begin(), rec.dataset.end());
  const std::size_t pairs = options.holder_pairs == 0 ? pool.size() : options.holder_pairs;
  const auto runs = study.runs();
  const auto diffs = study.final_differences();
  const auto noise = estimate_sigma_mu(diffs);

  BoundInputs in;
  in.alpha = options.alpha;
  in.L = estimate_holder_constant(model, pool, options.alpha, pairs, options.holder_radius, options.seed);
  in.eta = config.eta;
  in.n = per_worker;
  in.m = p.size();
  in.d = model.dim();
  in.lambda = eigenvalues_symmetric(p).lambda;
  in.sigma_sq = noise.sigma_sq;
  in.mu_sq = noise.mu_sq;
  in.epsilon_S = estimate_epsilon_S(runs, options.alpha);
  in.p = options.p;
  if (options.alpha == 0.0) {
    const std::vector<double> zero(model.dim(), 0.0);
    for (const auto& z : pool) in.grad_at_zero_sup = std::max(in.grad_at_zero_sup, std::sqrt(squared_norm(model.gradient(zero, z))));
  }
  return in;
}

Curve generalization_gap(std::span<const RunTrace> traces, const SyntheticTask& task,
                         const LossModel& model, std::span<const std::vector<Sample>> datasets,
                         std::size_t mc_samples, std::uint64_t mc_seed) {
  if (traces.empty()) throw InputError("generalization_gap: no traces");
  if (datasets.size() != 1 && datasets.size() != traces.size())
    throw InputError("generalization_gap: need one dataset or one per trace");
  const std::size_t points = traces.front().snapshots.size();
  std::vector<std::vector<double>> rows;
  rows.reserve(traces.size());
  for (std::size_t r = 0; r < traces.size(); ++r) {
    const auto& trace = traces[r];
    if (trace.snapshots.size() != points)
      throw InputError("generalization_gap: traces do not share a logging grid");
    const auto& data = datasets.size() == 1 ? datasets.front() : datasets[r];
    std::vector<double> row(points);
    for (std::size_t s = 0; s < points; ++s) {
      const auto& w = trace.snapshots[s].consensus;
      row[s] = population_risk(task, w, mc_samples, mc_seed).value - model.empirical_risk(w, data);
    }
    rows.push_back(std::move(row));
  }
  return curve_from_rows(logged_iters(traces.front()), rows);
}

std::string_view to_string(GaussianityVerdict verdict) {
  switch (verdict) {
    case GaussianityVerdict::Pass: return "pass";
    case GaussianityVerdict::Fail: return "fail";
    case GaussianityVerdict::Degenerate: return "degenerate";
  }
  return "unknown";
}

namespace {

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};

Moments central_moments(std::span<const double> v) {
  Moments out;
  if (v.empty()) return out;
  const double n = static_cast<double>(v.size());
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : v) {
    const double d = x - out.mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  out.variance = m2;
  if (m2 > 0.0) {
    out.skewness = m3 / std::pow(m2, 1.5);
    out.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return out;
}

}  // namespace

GaussianityReport gaussianity_report(std::span<const WorkerMatrix> diffs, double skew_tol,
                                     double kurt_tol) {
  if (diffs.empty()) throw InputError("gaussianity: no weight differences");
  const std::size_t m = diffs.front().rows();
  const std::size_t d = diffs.front().cols();
  for (const auto& w : diffs)
    if (w.rows() != m || w.cols() != d) throw InputError("gaussianity: shapes differ");
  const std::size_t pooled_count = diffs.size() * m * d;
  if (pooled_count < 100)
    throw InputError("gaussianity: need at least 100 pooled coordinates (got " +
                     std::to_string(pooled_count) + ")");

  GaussianityReport report;
  report.pooled_count = pooled_count;
  std::vector<double> pooled;
  pooled.reserve(pooled_count);
  const double count = static_cast<double>(diffs.size());
  for (std::size_t k = 0; k < m; ++k) {
    std::vector<double> values;
    values.reserve(diffs.size() * d);
    double mean_sq_norm = 0.0;
    double mean_var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double mean = 0.0;
      for (const auto& w : diffs) mean += w(k, j);
      mean /= count;
      double ss = 0.0;
      for (const auto& w : diffs) {
        ss += (w(k, j) - mean) * (w(k, j) - mean);
        values.push_back(w(k, j));
      }
      mean_sq_norm += mean * mean;
      if (diffs.size() > 1) mean_var += ss / (count - 1.0);
    }
    const auto moments = central_moments(values);
    report.workers.push_back({std::sqrt(mean_sq_norm), mean_var / static_cast<double>(d),
                              moments.skewness, moments.excess_kurtosis});
    pooled.insert(pooled.end(), values.begin(), values.end());
  }

  const auto moments = central_moments(pooled);
  report.pooled_mean = moments.mean;
  report.pooled_variance = moments.variance;
  report.skewness = moments.skewness;
  report.excess_kurtosis = moments.excess_kurtosis;
  const double scale = std::max(1.0, moments.mean * moments.mean);
  if (!(moments.variance > 1e-300 * scale)) {
    report.verdict = GaussianityVerdict::Degenerate;
  } else {
    report.verdict = std::abs(moments.skewness) <= skew_tol &&
                             std::abs(moments.excess_kurtosis) <= kurt_tol
                         ? GaussianityVerdict::Pass
                         : GaussianityVerdict::Fail;
  }

  auto [lo_it, hi_it] = std::minmax_element(pooled.begin(), pooled.end());
  double lo = *lo_it;
  double hi = *hi_it;
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double width = (hi - lo) / static_cast<double>(kHistogramBins);
  report.histogram.resize(kHistogramBins);
  for (std::size_t b = 0; b < kHistogramBins; ++b) {
    report.histogram[b].left = lo + width * static_cast<double>(b);
    report.histogram[b].right = b + 1 == kHistogramBins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (double v : pooled) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    report.histogram[std::min(b, kHistogramBins - 1)].count++;
  }
  return report;
}

GaussianityReport gaussianity_report(std::span<const CoupledTrace> coupled, double skew_tol,
                                     double kurt_tol) {
  std::vector<WorkerMatrix> diffs;
  diffs.reserve(coupled.size());
  for (const auto& c : coupled) diffs.push_back(c.final_differences);
  return gaussianity_report(diffs, skew_tol, kurt_tol);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2)
    throw InputError("spearman: need two equal-length series of at least 2 points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

ControlSweep consensus_control_sweep(const GossipMatrix& p, const DataSpec& data,
                                     const LossModel& model, const TrainConfig& config,
                                     double gamma_sq, std::span<const std::size_t> t_gamma_values,
                                     const StabilityOptions& options, std::size_t max_rounds) {
  if (options.replicates < 5) throw InputError("consensus control sweep: need at least 5 replicates");
  if (t_gamma_values.empty()) throw InputError("consensus control sweep: no t_gamma values");
  if (!std::is_sorted(t_gamma_values.begin(), t_gamma_values.end()))
    throw InputError("consensus control sweep: t_gamma values must be sorted ascending");
  if (t_gamma_values.back() > config.T)
    throw InputError("consensus control sweep: t_gamma values must not exceed T");
  ControlSweep sweep;
  std::vector<double> xs, ys;
  for (std::size_t t_gamma : t_gamma_values) {
    StabilityOptions opts = options;
    opts.control = ConsensusControl{gamma_sq, t_gamma, max_rounds};
    const auto study = estimate_stability(p, data, model, config, opts);
    sweep.points.push_back(
        {t_gamma, study.estimate.curve.final_mean(), study.estimate.curve.final_se()});
    xs.push_back(static_cast<double>(t_gamma));
    ys.push_back(study.estimate.curve.final_mean());
  }
  sweep.spearman = xs.size() >= 2 ? spearman_correlation(xs, ys) : 0.0;
  return sweep;
}

std::vector<TopologyRow> topology_comparison(std::span<const TopologyKind> kinds, std::size_t m,
                                             const DataSpec& data, const LossModel& model,
                                             const TrainConfig& config,
                                             const StabilityOptions& options,
                                             std::size_t mc_samples) {
  for (auto kind : kinds) check_structure(kind, m);
  std::vector<TopologyRow> rows;
  for (auto kind : kinds) {
    TopologyRow row;
    row.kind = kind;
    const auto p = build_gossip_matrix(kind, m);
    row.lambda = eigenvalues_symmetric(p).lambda;
    row.study = estimate_stability(p, data, model, config, options);
    const auto runs = row.study.runs();
    const auto sets = row.study.datasets();
    row.gap = generalization_gap(runs, data.task, model, sets, mc_samples);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dsgd
