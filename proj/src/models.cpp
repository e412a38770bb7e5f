#include "dsgd/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace dsgd {

namespace {

double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

// log(1 + exp(s)) without overflow.
double log1p_exp(double s) { return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }

double softplus(double u) { return log1p_exp(kSoftplusSharpness * u) / kSoftplusSharpness; }

// Lower-triangular factor of a PSD matrix; zero pivots leave a zero column.
Matrix psd_cholesky(const Matrix& a) {
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (diag < -1e-10 * std::max(1.0, std::abs(a(j, j))))
      throw InputError("feature covariance is not positive semi-definite");
    if (diag <= 1e-14) continue;
    const double root = std::sqrt(diag);
    l(j, j) = root;
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / root;
    }
  }
  return l;
}

class SampleGenerator {
 public:
  SampleGenerator(const SyntheticTask& task, std::uint64_t seed)
      : task_(task), factor_(psd_cholesky(task.feature_cov)), rng_(seed) {}

  Sample next() {
    const std::size_t dx = task_.d_x;
    std::vector<double> g(dx);
    for (auto& v : g) v = normal_(rng_);
    Sample z;
    z.x.assign(dx, 0.0);
    for (std::size_t i = 0; i < dx; ++i)
      for (std::size_t k = 0; k <= i; ++k) z.x[i] += factor_(i, k) * g[k];
    const double signal = dot(z.x, task_.w_star);
    if (task_.family == LossFamily::LogisticRegression) {
      z.y = uniform_(rng_) < sigmoid(signal) ? 1.0 : 0.0;
    } else {
      const double noise = normal_(rng_);
      z.y = signal + task_.noise_std * noise;
    }
    return z;
  }

 private:
  const SyntheticTask& task_;
  Matrix factor_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
  std::uniform_real_distribution<double> uniform_;
};

// Uniform draw from the ball of the given radius.
std::vector<double> random_in_ball(std::size_t d, double radius, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  std::vector<double> v(d);
  double norm = 0.0;
  do {
    for (auto& e : v) e = normal(rng);
    norm = std::sqrt(squared_norm(v));
  } while (norm == 0.0);
  const double r = radius * std::pow(uniform(rng), 1.0 / static_cast<double>(d));
  for (auto& e : v) e *= r / norm;
  return v;
}

}  // namespace

std::string_view to_string(LossFamily family) {
  switch (family) {
    case LossFamily::LinearRegression: return "linear";
    case LossFamily::LogisticRegression: return "logistic";
    case LossFamily::TwoLayerMLP: return "mlp";
  }
  return "unknown";
}

LossFamily parse_loss_family(std::string_view name) {
  if (name == "linear" || name == "linear_regression") return LossFamily::LinearRegression;
  if (name == "logistic" || name == "logistic_regression") return LossFamily::LogisticRegression;
  if (name == "mlp" || name == "two_layer_mlp") return LossFamily::TwoLayerMLP;
  throw InputError("unknown loss family '" + std::string(name) + "'");
}

std::size_t SyntheticTask::model_dim() const {
  if (family == LossFamily::TwoLayerMLP) return hidden * d_x + 2 * hidden + 1;
  return d_x;
}

void SyntheticTask::validate() const {
  if (d_x == 0) throw InputError("task: feature dimension d_x must be positive");
  if (w_star.size() != d_x) throw InputError("task: w_star must have d_x entries");
  if (feature_cov.rows() != d_x || feature_cov.cols() != d_x)
    throw InputError("task: feature covariance must be d_x x d_x");
  for (std::size_t i = 0; i < d_x; ++i)
    for (std::size_t j = i + 1; j < d_x; ++j)
      if (std::abs(feature_cov(i, j) - feature_cov(j, i)) > 1e-12)
        throw InputError("task: feature covariance must be symmetric");
  psd_cholesky(feature_cov);
  if (!(noise_std >= 0.0)) throw InputError("task: noise_std must be >= 0");
  if (family == LossFamily::TwoLayerMLP && hidden == 0)
    throw InputError("task: mlp requires a positive hidden width");
}

SyntheticTask make_isotropic_task(LossFamily family, std::size_t d_x, double feature_var,
                                  double noise_std, std::uint64_t seed, std::size_t hidden) {
  if (!(feature_var > 0.0)) throw InputError("task: feature variance must be positive");
  SyntheticTask task;
  task.family = family;
  task.d_x = d_x;
  task.hidden = family == LossFamily::TwoLayerMLP ? hidden : 0;
  task.noise_std = noise_std;
  task.feature_cov = Matrix::identity(d_x);
  for (std::size_t i = 0; i < d_x; ++i) task.feature_cov(i, i) = feature_var;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(d_x, 1))));
  task.w_star.resize(d_x);
  for (auto& v : task.w_star) v = normal(rng);
  task.validate();
  return task;
}

LossModel::LossModel(LossFamily family, std::size_t d_x, std::size_t hidden)
    : family_(family), d_x_(d_x), hidden_(family == LossFamily::TwoLayerMLP ? hidden : 0) {
  if (d_x == 0) throw InputError("loss model: feature dimension must be positive");
  if (family == LossFamily::TwoLayerMLP && hidden == 0)
    throw InputError("loss model: mlp requires a positive hidden width");
}

std::size_t LossModel::dim() const {
  if (family_ == LossFamily::TwoLayerMLP) return hidden_ * d_x_ + 2 * hidden_ + 1;
  return d_x_;
}

void LossModel::declare_holder(double alpha, double L) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("Hoelder exponent alpha must lie in [0, 1]");
  if (!(L > 0.0)) throw InputError("Hoelder constant L must be positive");
  alpha_ = alpha;
  L_ = L;
}

void LossModel::check(std::span<const double> w, const Sample& z) const {
  if (w.size() != dim())
    throw InputError("loss: parameter vector has " + std::to_string(w.size()) + " entries, expected " +
                     std::to_string(dim()));
  if (z.x.size() != d_x_)
    throw InputError("loss: sample has " + std::to_string(z.x.size()) + " features, expected " +
                     std::to_string(d_x_));
}

// Parameter layout: V (hidden x d_x, row-major) | b (hidden) | a (hidden) | c.
double LossModel::mlp_forward(std::span<const double> w, const Sample& z,
                              std::vector<double>* pre) const {
  const std::size_t h = hidden_;
  const double* v = w.data();
  const double* b = v + h * d_x_;
  const double* a = b + h;
  double out = a[h];
  if (pre) pre->resize(h);
  for (std::size_t j = 0; j < h; ++j) {
    const double u = dot({v + j * d_x_, d_x_}, z.x) + b[j];
    if (pre) (*pre)[j] = u;
    out += a[j] * softplus(u);
  }
  return out;
}

double LossModel::value(std::span<const double> w, const Sample& z) const {
  check(w, z);
  switch (family_) {
    case LossFamily::LinearRegression: {
      const double r = dot(z.x, w) - z.y;
      return 0.5 * r * r;
    }
    case LossFamily::LogisticRegression: {
      const double margin = (2.0 * z.y - 1.0) * dot(z.x, w);
      return log1p_exp(-margin);
    }
    case LossFamily::TwoLayerMLP: {
      const double r = mlp_forward(w, z, nullptr) - z.y;
      return 0.5 * r * r;
    }
  }
  return 0.0;
}

double LossModel::gradient(std::span<const double> w, const Sample& z,
                           std::span<double> grad) const {
  check(w, z);
  if (grad.size() != dim()) throw InputError("loss: gradient buffer has the wrong size");
  switch (family_) {
    case LossFamily::LinearRegression: {
      const double r = dot(z.x, w) - z.y;
      for (std::size_t i = 0; i < d_x_; ++i) grad[i] = r * z.x[i];
      return 0.5 * r * r;
    }
    case LossFamily::LogisticRegression: {
      const double sign = 2.0 * z.y - 1.0;
      const double margin = sign * dot(z.x, w);
      const double scale = -sign * sigmoid(-margin);
      for (std::size_t i = 0; i < d_x_; ++i) grad[i] = scale * z.x[i];
      return log1p_exp(-margin);
    }
    case LossFamily::TwoLayerMLP: {
      std::vector<double> pre;
      const double r = mlp_forward(w, z, &pre) - z.y;
      const std::size_t h = hidden_;
      const double* a = w.data() + h * d_x_ + h;
      double* gv = grad.data();
      double* gb = gv + h * d_x_;
      double* ga = gb + h;
      for (std::size_t j = 0; j < h; ++j) {
        const double act_slope = sigmoid(kSoftplusSharpness * pre[j]);
        const double back = r * a[j] * act_slope;
        for (std::size_t i = 0; i < d_x_; ++i) gv[j * d_x_ + i] = back * z.x[i];
        gb[j] = back;
        ga[j] = r * softplus(pre[j]);
      }
      ga[h] = r;
      return 0.5 * r * r;
    }
  }
  return 0.0;
}

std::vector<double> LossModel::gradient(std::span<const double> w, const Sample& z) const {
  std::vector<double> g(dim());
  gradient(w, z, g);
  return g;
}

double LossModel::empirical_risk(std::span<const double> w, std::span<const Sample> samples) const {
  if (samples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& z : samples) sum += value(w, z);
  return sum / static_cast<double>(samples.size());
}

std::vector<Sample> sample_dataset(const SyntheticTask& task, std::size_t count,
                                   std::uint64_t seed) {
  task.validate();
  SampleGenerator gen(task, seed);
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen.next());
  return out;
}

std::vector<Sample> load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw InputError("dataset '" + path.string() + "' is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      cell.erase(cell.find_last_not_of(" \t\r") + 1);
      header.push_back(cell);
    }
  }
  if (header.size() < 2 || header.back() != "y")
    throw InputError("dataset header must be x1..xdx,y");
  for (std::size_t i = 0; i + 1 < header.size(); ++i)
    if (header[i] != "x" + std::to_string(i + 1))
      throw InputError("dataset header column " + std::to_string(i + 1) + " must be 'x" +
                       std::to_string(i + 1) + "'");
  const std::size_t dx = header.size() - 1;
  std::vector<Sample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> values;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw InputError("dataset line " + std::to_string(line_no) + ": malformed number");
      }
      if (!std::isfinite(values.back()))
        throw InputError("dataset line " + std::to_string(line_no) + ": non-finite value");
    }
    if (values.size() != dx + 1)
      throw InputError("dataset line " + std::to_string(line_no) + ": expected " +
                       std::to_string(dx + 1) + " columns");
    Sample z;
    z.y = values.back();
    values.pop_back();
    z.x = std::move(values);
    out.push_back(std::move(z));
  }
  return out;
}

RiskEstimate population_risk_monte_carlo(const SyntheticTask& task, std::span<const double> w,
                                         std::size_t mc_samples, std::uint64_t seed) {
  if (mc_samples < 2) throw InputError("Monte-Carlo risk needs at least 2 samples");
  task.validate();
  const LossModel model = LossModel::for_task(task);
  SampleGenerator gen(task, seed);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (std::size_t i = 0; i < mc_samples; ++i) {
    const double f = model.value(w, gen.next());
    sum += f;
    sum_sq += f * f;
  }
  const double n = static_cast<double>(mc_samples);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n), false};
}

RiskEstimate population_risk(const SyntheticTask& task, std::span<const double> w,
                             std::size_t mc_samples, std::uint64_t seed) {
  if (task.family != LossFamily::LinearRegression)
    return population_risk_monte_carlo(task, w, mc_samples, seed);
  if (w.size() != task.d_x) throw InputError("population_risk: dimension mismatch");
  std::vector<double> diff(task.d_x);
  for (std::size_t i = 0; i < task.d_x; ++i) diff[i] = w[i] - task.w_star[i];
  double quad = 0.0;
  for (std::size_t i = 0; i < task.d_x; ++i)
    quad += diff[i] * dot(task.feature_cov.row(i), diff);
  return {0.5 * quad + 0.5 * task.noise_std * task.noise_std, 0.0, true};
}

double c_alpha_constant(double alpha, double L, double grad_at_zero_sup) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("c_alpha_constant: alpha must lie in [0, 1]");
  if (!(L > 0.0)) throw InputError("c_alpha_constant: L must be positive");
  if (alpha == 0.0) {
    if (!(grad_at_zero_sup >= 0.0))
      throw InputError("c_alpha_constant: sup gradient norm at zero must be >= 0");
    return grad_at_zero_sup + L;
  }
  return std::pow(1.0 + 1.0 / alpha, alpha / (1.0 + alpha)) * std::pow(L, 1.0 / (1.0 + alpha));
}

double estimate_holder_constant(const LossModel& model, std::span<const Sample> pool, double alpha,
                                std::size_t pairs, double radius, std::uint64_t seed) {
  if (pairs == 0) throw InputError("estimate_holder_constant: pairs must be >= 1");
  if (!(radius > 0.0)) throw InputError("estimate_holder_constant: radius must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InputError("estimate_holder_constant: alpha must lie in [0, 1]");
  if (pool.empty()) throw InputError("estimate_holder_constant: empty sample pool");

  constexpr int kRefineSteps = 3;
  const double probe = 1e-3 * radius;
  const std::size_t d = model.dim();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<double> g1(d), g2(d), delta(d), shifted(d);

  double best = 0.0;
  auto observe = [&](std::span<const double> w, std::span<const double> w2, const Sample& z) {
    const double dist = std::sqrt(squared_distance(w, w2));
    if (dist == 0.0) return;
    model.gradient(w, z, g1);
    model.gradient(w2, z, g2);
    best = std::max(best, std::sqrt(squared_distance(g1, g2)) / std::pow(dist, alpha));
  };

  for (std::size_t p = 0; p < pairs; ++p) {
    const Sample& z = pool.size() >= pairs ? pool[p] : pool[pick(rng)];
    const auto w = random_in_ball(d, radius - probe, rng);
    const auto w2 = random_in_ball(d, radius, rng);
    observe(w, w2, z);

    // Probe along the gradient-difference direction (power iteration on the
    // local curvature).
    for (std::size_t i = 0; i < d; ++i) delta[i] = w2[i] - w[i];
    for (int step = 0; step < kRefineSteps; ++step) {
      const double norm = std::sqrt(squared_norm(delta));
      if (norm == 0.0) break;
      for (std::size_t i = 0; i < d; ++i) shifted[i] = w[i] + probe * delta[i] / norm;
      observe(w, shifted, z);
      for (std::size_t i = 0; i < d; ++i) delta[i] = g2[i] - g1[i];
    }
  }
  return best;
}

double estimate_holder_constant(const LossModel& model, const SyntheticTask& task, double alpha,
                                std::size_t pairs, double radius, std::uint64_t seed) {
  if (pairs == 0) throw InputError("estimate_holder_constant: pairs must be >= 1");
  const auto pool = sample_dataset(task, pairs, derive_seed(seed, "holder-pool"));
  return estimate_holder_constant(model, pool, alpha, pairs, radius, seed);
}

SelfBoundingReport self_bounding_check(const LossModel& model, std::span<const Sample> pool,
                                       double alpha, double L, std::size_t trials,
                                       std::uint64_t seed, double radius) {
  if (pool.empty()) throw InputError("self_bounding_check: empty sample pool");
  const double c = c_alpha_constant(alpha, L);
  const double exponent = alpha / (1.0 + alpha);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<double> g(model.dim());
  SelfBoundingReport report;
  for (std::size_t t = 0; t < trials; ++t) {
    const Sample& z = pool.size() >= trials ? pool[t] : pool[pick(rng)];
    const auto w = random_in_ball(model.dim(), radius, rng);
    const double f = model.gradient(w, z, g);
    const double lhs = std::sqrt(squared_norm(g));
    const double rhs = c * std::pow(f, exponent);
    if (lhs > rhs + 1e-9) ++report.violations;
    if (rhs > 0.0) report.max_ratio = std::max(report.max_ratio, lhs / rhs);
  }
  return report;
}

}  // namespace dsgd
