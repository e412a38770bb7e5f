#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dsgd/analysis.hpp"

using namespace dsgd;

namespace {

DataSpec small_linear(std::size_t n, double noise = 0.5) {
  return {make_isotropic_task(LossFamily::LinearRegression, 3, 1.0, noise, 4), n};
}

TrainConfig train(std::size_t T, double eta, std::size_t every = 0) {
  TrainConfig c;
  c.T = T;
  c.eta = LearningRate::constant(eta);
  c.snapshot_every = every;
  return c;
}

// Independent scalar implementation of the coupled-run expectation for
// m = 2, n = 2, d = 1 with a fully averaging gossip matrix.
std::vector<double> brute_force(const std::vector<std::vector<Sample>>& shards,
                                const std::vector<Sample>& fresh, double eta, int T) {
  std::vector<double> total(T + 1, 0.0);
  const int digits = 2 * T;
  int count = 0;
  for (int seq = 0; seq < (1 << digits); ++seq) {
    for (int i = 0; i < 2; ++i) {
      double a[2] = {0, 0}, b[2] = {0, 0};
      for (int t = 0; t < T; ++t) {
        double na[2], nb[2];
        for (int k = 0; k < 2; ++k) {
          const int idx = (seq >> (2 * t + k)) & 1;
          const Sample& za = shards[k][idx];
          const Sample& zb = idx == i ? fresh[k] : za;
          const double ga = (za.x[0] * a[k] - za.y) * za.x[0];
          const double gb = (zb.x[0] * b[k] - zb.y) * zb.x[0];
          na[k] = 0.5 * (a[0] + a[1]) - eta * ga;
          nb[k] = 0.5 * (b[0] + b[1]) - eta * gb;
        }
        for (int k = 0; k < 2; ++k) {
          a[k] = na[k];
          b[k] = nb[k];
        }
        total[t + 1] += 0.5 * ((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]));
      }
      ++count;
    }
  }
  for (auto& v : total) v /= count;
  return total;
}

}  // namespace

TEST(Stability, ExhaustiveMatchesBruteForce) {
  const std::vector<std::vector<Sample>> raw{{{{0.7}, 1.1}, {{-1.3}, 0.2}}, {{{0.4}, -0.9}, {{2.0}, 0.5}}};
  const std::vector<Sample> fresh{{{1.5}, -0.3}, {{-0.6}, 0.8}};
  const Shards shards(raw);
  const auto p = build_gossip_matrix(TopologyKind::Ring, 2);
  const auto est = estimate_stability_exhaustive(p, shards, fresh, LossModel(LossFamily::LinearRegression, 1),
                                                 train(3, 0.1, 1), PerturbationMode::Synchronized);
  const auto expected = brute_force(raw, fresh, 0.1, 3);
  ASSERT_EQ(est.curve.mean.size(), 4u);
  for (std::size_t t = 0; t <= 3; ++t) EXPECT_NEAR(est.curve.mean[t], expected[t], 1e-12) << t;
  EXPECT_GT(est.curve.mean[3], 0.0);
}

TEST(Stability, ZeroStepGivesZero) {
  for (auto kind : {TopologyKind::FullyConnected, TopologyKind::Ring, TopologyKind::Disconnected})
    for (auto mode : {PerturbationMode::Synchronized, PerturbationMode::SingleWorker}) {
      StabilityOptions opt;
      opt.replicates = 3;
      opt.pairs = 2;
      opt.mode = mode;
      const auto study = estimate_stability(build_gossip_matrix(kind, 4), small_linear(5),
                                            LossModel(LossFamily::LinearRegression, 3), train(30, 0.0), opt);
      for (double v : study.estimate.curve.mean) EXPECT_EQ(v, 0.0);
    }
}

TEST(Stability, SingleWorkerBelowSynchronizedWhenDisconnected) {
  StabilityOptions opt;
  opt.replicates = 10;
  opt.pairs = 4;
  opt.base_seed = 3;
  const auto p = build_gossip_matrix(TopologyKind::Disconnected, 4);
  const LossModel model(LossFamily::LinearRegression, 3);
  const auto sync = estimate_stability(p, small_linear(6), model, train(100, 0.05), opt);
  opt.mode = PerturbationMode::SingleWorker;
  const auto single = estimate_stability(p, small_linear(6), model, train(100, 0.05), opt);
  EXPECT_LT(single.estimate.curve.final_mean(), sync.estimate.curve.final_mean());
  for (const auto& rec : single.replicates)
    for (const auto& diff : rec.final_differences) {
      std::size_t moved = 0;
      for (std::size_t k = 0; k < diff.rows(); ++k) moved += squared_norm(diff.row(k)) > 0.0;
      EXPECT_LE(moved, 1u);
    }
}

TEST(Stability, ParallelismDoesNotChangeResults) {
  StabilityOptions opt;
  opt.replicates = 9;
  opt.pairs = 3;
  opt.base_seed = 12;
  const auto p = build_gossip_matrix(TopologyKind::Ring, 8);
  const LossModel model(LossFamily::LinearRegression, 3);
  const auto a = estimate_stability(p, small_linear(5), model, train(80, 0.05), opt);
  opt.jobs = 8;
  const auto b = estimate_stability(p, small_linear(5), model, train(80, 0.05), opt);
  EXPECT_EQ(a.estimate.curve.mean, b.estimate.curve.mean);
  EXPECT_EQ(a.estimate.curve.se, b.estimate.curve.se);
}

TEST(Stability, Preconditions) {
  StabilityOptions opt;
  opt.replicates = 1;
  const auto p = build_gossip_matrix(TopologyKind::Ring, 4);
  const LossModel model(LossFamily::LinearRegression, 3);
  EXPECT_THROW(estimate_stability(p, small_linear(5), model, train(5, 0.1), opt), InputError);
  opt.replicates = 2;
  opt.pairs = 0;
  EXPECT_THROW(estimate_stability(p, small_linear(5), model, train(5, 0.1), opt), InputError);
}

TEST(SigmaMu, KnownDistribution) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.1, 0.2);
  std::vector<WorkerMatrix> diffs;
  for (int r = 0; r < 1000; ++r) {
    WorkerMatrix w(2, 100);
    for (auto& v : w.data()) v = g(rng);
    diffs.push_back(std::move(w));
  }
  const auto est = estimate_sigma_mu(diffs);
  EXPECT_NEAR(est.sigma_sq, 0.04, 0.004);
  EXPECT_NEAR(est.mu_sq, 0.01, 0.001);
  std::vector<WorkerMatrix> zeros(3, WorkerMatrix(2, 4));
  const auto z = estimate_sigma_mu(zeros);
  EXPECT_EQ(z.sigma_sq, 0.0);
  EXPECT_EQ(z.mu_sq, 0.0);
  EXPECT_THROW(estimate_sigma_mu(std::span<const WorkerMatrix>(diffs.data(), 1)), InputError);
}

TEST(EpsilonS, Examples) {
  RunTrace t;
  Snapshot s;
  s.worker_risks = {4.0};
  t.snapshots.push_back(s);
  const std::vector<RunTrace> traces{t};
  EXPECT_DOUBLE_EQ(estimate_epsilon_S(traces, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(estimate_epsilon_S(traces, 0.0), 1.0);
  RunTrace zero;
  Snapshot zs;
  zs.worker_risks = {0.0, 0.0};
  zero.snapshots.push_back(zs);
  const std::vector<RunTrace> zt{zero};
  EXPECT_DOUBLE_EQ(estimate_epsilon_S(zt, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(estimate_epsilon_S(zt, 0.0), 1.0);
  EXPECT_THROW(estimate_epsilon_S(std::span<const RunTrace>{}, 1.0), InputError);
}

namespace {

BoundInputs hand_inputs() {
  BoundInputs in;
  in.L = 1;
  in.alpha = 1;
  in.eta = LearningRate::constant(0.1);
  in.n = 10;
  in.m = 4;
  in.d = 2;
  in.lambda = 1.0 / 3;
  in.sigma_sq = 0.6;
  in.mu_sq = 0.4;
  in.p = 1;
  in.epsilon_S = 1;
  return in;
}

}  // namespace

TEST(Bound, HandExample) {
  const std::vector<double> risk{1.0};
  const auto curve = stability_bound_curve(hand_inputs(), risk, 1);
  ASSERT_EQ(curve.size(), 2u);
  EXPECT_EQ(curve[0], 0.0);
  EXPECT_NEAR(curve[1], 1.19 * 2 / 3 + 0.008, 1e-12);
  EXPECT_NEAR(curve[1], 0.801333333333, 1e-9);
}

TEST(Bound, DegenerateAndLimit) {
  auto in = hand_inputs();
  in.lambda = 0;
  in.m = 1;
  in.sigma_sq = in.mu_sq = 0;
  const std::vector<double> zero(20, 0.0);
  for (double v : stability_bound_curve(in, zero, 20)) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(generalization_bound_closed({in.L, in.alpha, in.eta, in.n, 1, in.d, 0, 0, 0, 0, 1, 0}, 20), 0.0);

  auto fixed = hand_inputs();
  const std::vector<double> risk(5000, fixed.epsilon_S);
  const auto curve = stability_bound_curve(fixed, risk, 5000);
  EXPECT_NEAR(curve.back(), stability_bound_limit(fixed), 1e-9 * stability_bound_limit(fixed));
  fixed.L = 10;
  EXPECT_THROW(stability_bound_limit(fixed), InputError);
  const auto big = stability_bound_curve(fixed, risk, 5000);
  EXPECT_TRUE(std::isinf(big.back()));
}

TEST(Bound, MonotoneInLambdaAndTime) {
  auto in = hand_inputs();
  const std::vector<double> risk(100, 0.7);
  double prev = -1;
  for (int i = 0; i <= 9; ++i) {
    in.lambda = 0.1 * i;
    const double v = stability_bound_curve(in, risk, 100).back();
    EXPECT_GT(v, prev);
    prev = v;
  }
  const auto curve = stability_bound_curve(hand_inputs(), risk, 100);
  for (std::size_t t = 1; t < curve.size(); ++t) EXPECT_GE(curve[t], curve[t - 1]);

  prev = -1;
  for (int i = 0; i <= 9; ++i) {
    in.lambda = 0.1 * i;
    const double v = generalization_bound_closed(in, 100);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(Bound, ClosedFormSandwich) {
  auto in = hand_inputs();
  for (std::size_t t : {1, 10, 200}) {
    const std::vector<double> risk(t, in.epsilon_S);
    const double composed =
        generalization_bound_from_stability(stability_bound_curve(in, risk, t).back(), in.L, 1.0, in.m, in.n);
    const double closed = generalization_bound_closed(in, t);
    EXPECT_GE(closed, composed / 2);
    EXPECT_LE(closed, 2 * composed);
  }
}

TEST(Bound, FromStability) {
  EXPECT_DOUBLE_EQ(generalization_bound_from_stability(0.0, 1, 1, 2, 4), 0.0);
  EXPECT_DOUBLE_EQ(generalization_bound_from_stability(0.25, 1, 1, 2, 4), 0.125);
  EXPECT_DOUBLE_EQ(generalization_bound_from_stability(0.7, 3, 0, 2, 5), 0.3);
  double prev = -1;
  for (double s : {0.0, 0.1, 0.5, 2.0}) {
    const double v = generalization_bound_from_stability(s, 1, 0.5, 3, 7);
    EXPECT_GE(v, 0.0);
    EXPECT_GT(v, prev);
    prev = v;
  }
}

TEST(Bound, OptimizedPNoWorseThanOne) {
  auto in = hand_inputs();
  const double p = optimize_p(in, 50);
  EXPECT_GT(p, 0.0);
  EXPECT_LE(p, 100.0);
  const std::vector<double> risk(50, in.epsilon_S);
  const double at_one = stability_bound_curve(in, risk, 50).back();
  in.p = p;
  EXPECT_LE(stability_bound_curve(in, risk, 50).back(), at_one + 1e-12);
}

TEST(GenGap, InitialisationAndLargeSample) {
  auto data = small_linear(8);
  const auto p = build_gossip_matrix(TopologyKind::Ring, 4);
  const LossModel model(LossFamily::LinearRegression, 3);
  const auto dataset = sample_dataset(data.task, 32, 1);
  TrainConfig cfg = train(40, 0.05);
  const auto run = run_dsgd(p, shard_iid(dataset, 4), model, cfg);
  const std::vector<RunTrace> runs{run};
  const std::vector<std::vector<Sample>> sets{dataset};
  const auto gap = generalization_gap(runs, data.task, model, sets);
  const std::vector<double> zero(3, 0.0);
  EXPECT_NEAR(gap.mean[0], population_risk(data.task, zero).value - model.empirical_risk(zero, dataset), 1e-12);

  auto noiseless = small_linear(8, 0.0);
  const auto clean = sample_dataset(noiseless.task, 8, 2);
  RunTrace exact;
  Snapshot s;
  s.consensus = noiseless.task.w_star;
  exact.snapshots.push_back(s);
  const std::vector<RunTrace> ex{exact};
  const std::vector<std::vector<Sample>> cs{clean};
  EXPECT_NEAR(generalization_gap(ex, noiseless.task, model, cs).mean[0], 0.0, 1e-20);

  DataSpec big{make_isotropic_task(LossFamily::LinearRegression, 5, 1.0, 1.0, 4), 10000};
  const auto large = sample_dataset(big.task, 10000, 3);
  const auto p1 = build_gossip_matrix(TopologyKind::Disconnected, 1);
  const LossModel model5(LossFamily::LinearRegression, 5);
  const auto r = run_dsgd(p1, shard_iid(large, 1), model5, train(20000, 0.01));
  const std::vector<RunTrace> rr{r};
  const std::vector<std::vector<Sample>> ls{large};
  EXPECT_LT(std::abs(generalization_gap(rr, big.task, model5, ls).final_mean()), 0.05);
}

TEST(Gaussianity, KnownDistributions) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::exponential_distribution<double> expo(1.0);
  std::vector<WorkerMatrix> gauss, skewed;
  for (int r = 0; r < 1000; ++r) {
    WorkerMatrix a(1, 100), b(1, 100);
    for (auto& v : a.data()) v = normal(rng);
    for (auto& v : b.data()) v = expo(rng);
    gauss.push_back(std::move(a));
    skewed.push_back(std::move(b));
  }
  const auto g = gaussianity_report(gauss);
  EXPECT_EQ(g.verdict, GaussianityVerdict::Pass);
  EXPECT_LT(std::abs(g.skewness), 0.05);
  EXPECT_EQ(g.pooled_count, 100000u);
  std::size_t total = 0;
  for (const auto& bin : g.histogram) total += bin.count;
  EXPECT_EQ(total, 100000u);
  EXPECT_EQ(g.histogram.size(), kHistogramBins);

  const auto e = gaussianity_report(skewed);
  EXPECT_EQ(e.verdict, GaussianityVerdict::Fail);
  EXPECT_NEAR(e.skewness, 2.0, 0.2);

  std::vector<WorkerMatrix> zeros(2, WorkerMatrix(2, 50));
  const auto z = gaussianity_report(zeros);
  EXPECT_EQ(z.verdict, GaussianityVerdict::Degenerate);
  EXPECT_EQ(z.pooled_variance, 0.0);

  std::vector<WorkerMatrix> few(2, WorkerMatrix(2, 10));
  EXPECT_THROW(gaussianity_report(few), InputError);
}

TEST(Spearman, Ranks) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{0.1, 0.4, 0.5, 2, 9};
  const std::vector<double> down{5, 4, 3, 2, 1};
  const std::vector<double> flat{1, 1, 1, 1, 1};
  const std::vector<double> tied{1, 1, 1, 1, 2};
  EXPECT_NEAR(spearman_correlation(x, up), 1.0, 1e-15);
  EXPECT_NEAR(spearman_correlation(x, down), -1.0, 1e-15);
  EXPECT_EQ(spearman_correlation(x, flat), 0.0);
  EXPECT_NEAR(spearman_correlation(x, tied), std::sqrt(0.5), 1e-12);
}

TEST(ControlSweep, FlatWhenControlNeverBinds) {
  StabilityOptions opt;
  opt.replicates = 5;
  opt.pairs = 2;
  const auto p = build_gossip_matrix(TopologyKind::Ring, 8);
  const LossModel model(LossFamily::LinearRegression, 3);
  const std::vector<std::size_t> tg{0, 20, 40};
  const auto sweep = consensus_control_sweep(p, small_linear(5), model, train(40, 0.05),
                                             std::numeric_limits<double>::infinity(), tg, opt);
  ASSERT_EQ(sweep.points.size(), 3u);
  EXPECT_EQ(sweep.points[0].stability, sweep.points[1].stability);
  EXPECT_EQ(sweep.points[1].stability, sweep.points[2].stability);
  EXPECT_EQ(sweep.spearman, 0.0);

  const std::vector<std::size_t> at_t{40, 40};
  const auto base = estimate_stability(p, small_linear(5), model, train(40, 0.05), opt);
  const auto same = consensus_control_sweep(p, small_linear(5), model, train(40, 0.05), 1e-4, at_t, opt);
  EXPECT_EQ(same.points[0].stability, base.estimate.curve.final_mean());

  const std::vector<std::size_t> unsorted{20, 0};
  EXPECT_THROW(consensus_control_sweep(p, small_linear(5), model, train(40, 0.05), 1e-4, unsorted, opt), InputError);
  opt.replicates = 4;
  EXPECT_THROW(consensus_control_sweep(p, small_linear(5), model, train(40, 0.05), 1e-4, tg, opt), InputError);
}

TEST(Comparison, Rows) {
  StabilityOptions opt;
  opt.replicates = 3;
  opt.pairs = 1;
  const LossModel model(LossFamily::LinearRegression, 3);
  const std::vector<TopologyKind> one{TopologyKind::FullyConnected};
  const auto rows = topology_comparison(one, 4, small_linear(4), model, train(20, 0.05), opt);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(rows[0].lambda, 0.0, 1e-12);
  const std::vector<TopologyKind> two{TopologyKind::FullyConnected, TopologyKind::Ring};
  const auto r2 = topology_comparison(two, 32, small_linear(2), model, train(10, 0.05), opt);
  EXPECT_GT(r2[1].lambda, r2[0].lambda);
  const std::vector<TopologyKind> bad{TopologyKind::Grid2dTorus};
  EXPECT_THROW(topology_comparison(bad, 10, small_linear(2), model, train(10, 0.05), opt), InputError);
}
