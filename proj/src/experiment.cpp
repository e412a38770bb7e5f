#include "dsgd/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "dsgd/parallel.hpp"

namespace dsgd {

using nlohmann::json;

namespace {

GossipMatrix gossip_for(const ExperimentConfig& c) {
  if (c.matrix_path) return load_gossip_matrix(*c.matrix_path);
  return build_gossip_matrix(c.kind, c.m);
}

json replicate_seeds(std::uint64_t base, std::size_t replicates) {
  json out = json::array();
  for (std::size_t r = 0; r < replicates; ++r)
    out.push_back({{"replicate", r},
                   {"data", derive_seed(base, "data", r)},
                   {"run", derive_seed(base, "run", r)},
                   {"replacement", derive_seed(base, "replacement", r)},
                   {"perturbation", derive_seed(base, "perturbation", r)}});
  return out;
}

json seeds_for(const ExperimentConfig& c) {
  json s;
  s["base"] = c.seed;
  if (c.experiment == ExperimentKind::Topology) return s;
  s["task"] = derive_seed(c.seed, "task");
  s["experiment"] = c.experiment_seed();
  s["replicates"] = replicate_seeds(c.experiment_seed(), c.replicates);
  return s;
}

// Same data and index streams as the base runs of estimate_stability.
std::pair<std::vector<RunTrace>, std::vector<std::vector<Sample>>> replicate_runs(
    const GossipMatrix& p, const ExperimentConfig& c) {
  const auto task = c.task();
  const auto model = c.model();
  const auto base = c.experiment_seed();
  std::vector<RunTrace> runs(c.replicates);
  std::vector<std::vector<Sample>> sets(c.replicates);
  parallel_for(c.replicates, c.jobs, [&](std::size_t r) {
    sets[r] = sample_dataset(task, p.size() * c.n, derive_seed(base, "data", r));
    TrainConfig cfg = c.train();
    cfg.seed = derive_seed(base, "run", r);
    runs[r] = run_dsgd(p, shard_iid(sets[r], p.size()), model, cfg);
  });
  return {std::move(runs), std::move(sets)};
}

json curve_summary(const Curve& c) {
  return {{"final_iter", c.iters.empty() ? 0 : c.iters.back()},
          {"final_mean", c.final_mean()},
          {"final_se", c.final_se()}};
}

ExperimentReport topology_experiment(const ExperimentConfig& c) {
  const auto p = gossip_for(c);
  const auto spectrum = eigenvalues_symmetric(p);
  ExperimentReport out;
  out.tables.emplace_back("topology.csv", topology_table(p.kind(), spectrum));
  out.tables.emplace_back("spectrum.csv", spectrum_table(spectrum));
  out.summary = {{"kind", to_string(p.kind())},
                 {"m", p.size()},
                 {"lambda", spectrum.lambda},
                 {"spectral_gap", spectrum.spectral_gap}};
  return out;
}

ExperimentReport stability_experiment(const ExperimentConfig& c) {
  const auto p = gossip_for(c);
  const auto study = estimate_stability(p, {c.task(), c.n}, c.model(), c.train(), c.stability_options());
  ExperimentReport out;
  out.tables.emplace_back("stability.csv", stability_table(study.estimate.curve));
  if (c.write_trace) out.tables.emplace_back("trace.csv", trace_table(study.runs()));
  out.summary = curve_summary(study.estimate.curve);
  out.summary["mode"] = to_string(c.mode);
  out.summary["lambda"] = eigenvalues_symmetric(p).lambda;
  return out;
}

ExperimentReport gengap_experiment(const ExperimentConfig& c) {
  const auto p = gossip_for(c);
  const auto [runs, sets] = replicate_runs(p, c);
  const auto gap = generalization_gap(runs, c.task(), c.model(), sets, c.mc_samples);
  ExperimentReport out;
  out.tables.emplace_back("gengap.csv", gengap_table(gap));
  if (c.write_trace) out.tables.emplace_back("trace.csv", trace_table(runs));
  out.summary = curve_summary(gap);
  out.summary["lambda"] = eigenvalues_symmetric(p).lambda;
  return out;
}

ExperimentReport bound_experiment(const ExperimentConfig& c) {
  const auto p = gossip_for(c);
  const auto model = c.model();
  const auto train = c.train();
  const auto study = estimate_stability(p, {c.task(), c.n}, model, train, c.stability_options());
  BoundEstimateOptions bo;
  bo.alpha = c.alpha;
  bo.p = c.p.value_or(1.0);
  bo.holder_pairs = c.holder_pairs;
  bo.holder_radius = c.holder_radius;
  bo.seed = derive_seed(c.experiment_seed(), "holder");
  auto inputs = conservative_bound_inputs(study, p, model, train, c.n, bo);
  if (!c.p) inputs.p = optimize_p(inputs, c.T);
  const std::vector<double> risk(c.T, inputs.epsilon_S);
  const auto bound = stability_bound_curve(inputs, risk, c.T);
  const auto& curve = study.estimate.curve;

  bool dominates = true;
  for (std::size_t i = 0; i < curve.iters.size(); ++i)
    dominates = dominates && bound[curve.iters[i]] >= curve.mean[i];

  ExperimentReport out;
  out.tables.emplace_back("bound.csv", bound_table(curve, bound));
  out.summary = curve_summary(curve);
  out.summary["L"] = inputs.L;
  out.summary["alpha"] = inputs.alpha;
  out.summary["lambda"] = inputs.lambda;
  out.summary["sigma_sq"] = inputs.sigma_sq;
  out.summary["mu_sq"] = inputs.mu_sq;
  out.summary["epsilon_S"] = inputs.epsilon_S;
  out.summary["p"] = inputs.p;
  out.summary["contraction"] = inputs.contraction();
  out.summary["bound_final"] = format_real(bound.back());
  out.summary["bound_dominates_measurement"] = dominates;
  out.summary["generalization_bound_closed"] = format_real(generalization_bound_closed(inputs, c.T));
  out.summary["generalization_bound_from_measured_stability"] = generalization_bound_from_stability(
      curve.final_mean(), inputs.L, inputs.alpha, inputs.m, inputs.n);
  if (inputs.contraction() < 1.0) out.summary["bound_limit"] = stability_bound_limit(inputs);
  else out.summary["bound_limit"] = "inf";
  // The closed-form limit assumes eta <= (1 - 2/m) / (2L).
  const double eta_max = (1.0 - 2.0 / static_cast<double>(c.m)) / (2.0 * inputs.L);
  out.summary["eta_max_for_closed_form"] = eta_max;
  out.summary["step_size_condition_met"] = c.eta <= eta_max;
  out.summary["warnings"] = json::array();
  if (c.eta > eta_max)
    out.summary["warnings"].push_back("eta " + format_real(c.eta) + " exceeds " + format_real(eta_max) +
                                      " so the step-size assumption of the closed form does not hold");
  return out;
}

double pooled_separation(double a, double sa, double b, double sb) {
  const double pooled = std::hypot(sa, sb);
  return pooled > 0.0 ? (b - a) / pooled : (b > a ? INFINITY : 0.0);
}

ExperimentReport compare_experiment(const ExperimentConfig& c) {
  auto rows = topology_comparison(c.kinds, c.m, {c.task(), c.n}, c.model(), c.train(),
                                  c.stability_options(), c.mc_samples);
  ExperimentReport out;
  out.tables.emplace_back("compare.csv", compare_table(rows));

  std::vector<const TopologyRow*> by_lambda;
  for (const auto& r : rows) by_lambda.push_back(&r);
  std::stable_sort(by_lambda.begin(), by_lambda.end(),
                   [](auto a, auto b) { return a->lambda < b->lambda; });
  bool stab_ordered = true, gap_ordered = true;
  json order = json::array();
  for (std::size_t i = 0; i < by_lambda.size(); ++i) {
    order.push_back(to_string(by_lambda[i]->kind));
    if (i == 0) continue;
    const auto* prev = by_lambda[i - 1];
    const auto* cur = by_lambda[i];
    stab_ordered = stab_ordered && prev->study.estimate.curve.final_mean() <= cur->study.estimate.curve.final_mean();
    gap_ordered = gap_ordered && prev->gap.final_mean() <= cur->gap.final_mean();
  }
  const auto* lo = by_lambda.front();
  const auto* hi = by_lambda.back();
  out.summary["lambda_order"] = order;
  out.summary["stability_ordered"] = stab_ordered;
  out.summary["gengap_ordered"] = gap_ordered;
  out.summary["stability_separation_se"] =
      pooled_separation(lo->study.estimate.curve.final_mean(), lo->study.estimate.curve.final_se(),
                        hi->study.estimate.curve.final_mean(), hi->study.estimate.curve.final_se());
  out.summary["gengap_separation_se"] = pooled_separation(
      lo->gap.final_mean(), lo->gap.final_se(), hi->gap.final_mean(), hi->gap.final_se());
  json table = json::array();
  for (const auto& r : rows)
    table.push_back({{"kind", to_string(r.kind)},
                     {"lambda", r.lambda},
                     {"stability_final", r.study.estimate.curve.final_mean()},
                     {"stability_se", r.study.estimate.curve.final_se()},
                     {"gengap_final", r.gap.final_mean()},
                     {"gengap_se", r.gap.final_se()}});
  out.summary["rows"] = table;
  return out;
}

ExperimentReport control_experiment(const ExperimentConfig& c) {
  const auto p = gossip_for(c);
  const auto sweep = consensus_control_sweep(p, {c.task(), c.n}, c.model(), c.train(), c.gamma_sq,
                                             c.t_gamma, c.stability_options(), c.max_rounds);
  ExperimentReport out;
  out.tables.emplace_back("consensus_control.csv", control_table(sweep));
  out.summary["spearman"] = sweep.spearman;
  out.summary["gamma_sq"] = std::isinf(c.gamma_sq) ? json("inf") : json(c.gamma_sq);
  return out;
}

ExperimentReport gaussianity_experiment(const ExperimentConfig& c) {
  const auto p = gossip_for(c);
  const auto study = estimate_stability(p, {c.task(), c.n}, c.model(), c.train(), c.stability_options());
  const auto report = gaussianity_report(study.final_differences(), c.skew_tol, c.kurt_tol);
  ExperimentReport out;
  out.tables.emplace_back("histogram.csv", histogram_table(report));
  out.tables.emplace_back("gaussianity.csv", gaussianity_table(report));
  out.summary = {{"pooled_count", report.pooled_count},
                 {"pooled_mean", report.pooled_mean},
                 {"pooled_variance", report.pooled_variance},
                 {"skewness", report.skewness},
                 {"excess_kurtosis", report.excess_kurtosis},
                 {"verdict", to_string(report.verdict)}};
  return out;
}

}  // namespace

ExperimentReport compute_experiment(const ExperimentConfig& c) {
  c.validate();
  ExperimentReport out;
  switch (c.experiment) {
    case ExperimentKind::Topology: out = topology_experiment(c); break;
    case ExperimentKind::Stability: out = stability_experiment(c); break;
    case ExperimentKind::GenGap: out = gengap_experiment(c); break;
    case ExperimentKind::Bound: out = bound_experiment(c); break;
    case ExperimentKind::Compare: out = compare_experiment(c); break;
    case ExperimentKind::ConsensusControl: out = control_experiment(c); break;
    case ExperimentKind::Gaussianity: out = gaussianity_experiment(c); break;
  }
  out.summary["experiment"] = to_string(c.experiment);
  out.summary["config_hash"] = config_hash(c);
  out.seeds = seeds_for(c);
  return out;
}

std::string config_hash(const ExperimentConfig& config) {
  auto j = to_json(config);
  j.erase("output_dir");
  j.erase("jobs");
  return sha256_hex(j.dump());
}

std::vector<std::filesystem::path> write_report(const ExperimentReport& report,
                                                const ExperimentConfig& config,
                                                double wall_clock_seconds) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec) throw InputError("cannot create output directory '" + config.output_dir.string() + "'");
  std::vector<fs::path> written;
  for (const auto& [name, table] : report.tables) {
    written.push_back(config.output_dir / name);
    emit_csv(table, written.back());
  }
  written.push_back(config.output_dir / "summary.json");
  emit_json_summary(report.summary, written.back());

  json files = json::array();
  for (const auto& path : written)
    files.push_back({{"name", path.filename().string()},
                     {"bytes", fs::file_size(path)},
                     {"sha256", sha256_file(path)}});
  json manifest = {{"schema_version", kSchemaVersion},
                   {"tool", "dsgd-lab"},
                   {"tool_version", kToolVersion},
                   {"config", to_json(config)},
                   {"config_hash", config_hash(config)},
                   {"wall_clock_seconds", wall_clock_seconds},
                   {"seeds", report.seeds},
                   {"files", files}};
  written.push_back(config.output_dir / "manifest.json");
  write_atomically(written.back(), manifest.dump(2) + "\n");
  return written;
}

int run_experiment(const ExperimentConfig& config, std::ostream& err) {
  try {
    const auto start = std::chrono::steady_clock::now();
    const auto report = compute_experiment(config);
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
    write_report(report, config, elapsed.count());
    return 0;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return 2;
  }
}

}  // namespace dsgd
