#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "dsgd/common.hpp"

namespace dsgd {

enum class LossFamily { LinearRegression, LogisticRegression, TwoLayerMLP };

std::string_view to_string(LossFamily family);
/// "linear", "logistic" or "mlp".
LossFamily parse_loss_family(std::string_view name);

struct Sample {
  std::vector<double> x;
  double y = 0.0;  // real target, or {0,1} label for logistic regression
};

/// Data distribution D. Features are x ~ N(0, feature_cov). Linear and MLP
/// tasks use y = x.w_star + noise_std * g; logistic tasks draw
/// y ~ Bernoulli(sigmoid(x.w_star)).
struct SyntheticTask {
  LossFamily family = LossFamily::LinearRegression;
  std::size_t d_x = 0;
  std::size_t hidden = 0;  // MLP hidden width
  std::vector<double> w_star;
  Matrix feature_cov;
  double noise_std = 0.0;

  std::size_t model_dim() const;
  void validate() const;
};

/// Isotropic task with covariance feature_var * I and w_star drawn from
/// N(0, I/d_x) using `seed`.
SyntheticTask make_isotropic_task(LossFamily family, std::size_t d_x, double feature_var,
                                  double noise_std, std::uint64_t seed, std::size_t hidden = 8);

/// Softplus sharpness used by the MLP activation.
inline constexpr double kSoftplusSharpness = 5.0;

/// Loss f(w; z) with exact gradient, plus the declared Hoelder pair (alpha, L).
class LossModel {
 public:
  LossModel(LossFamily family, std::size_t d_x, std::size_t hidden = 0);

  static LossModel for_task(const SyntheticTask& task) {
    return LossModel(task.family, task.d_x, task.hidden);
  }

  LossFamily family() const { return family_; }
  std::size_t feature_dim() const { return d_x_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t dim() const;

  double declared_alpha() const { return alpha_; }
  double declared_L() const { return L_; }
  void declare_holder(double alpha, double L);

  double value(std::span<const double> w, const Sample& z) const;
  /// Writes the gradient into `grad` (size dim()) and returns the loss value.
  double gradient(std::span<const double> w, const Sample& z, std::span<double> grad) const;
  std::vector<double> gradient(std::span<const double> w, const Sample& z) const;

  /// Mean loss over a sample set.
  double empirical_risk(std::span<const double> w, std::span<const Sample> samples) const;

 private:
  void check(std::span<const double> w, const Sample& z) const;
  double mlp_forward(std::span<const double> w, const Sample& z, std::vector<double>* pre) const;

  LossFamily family_;
  std::size_t d_x_;
  std::size_t hidden_;
  double alpha_ = 1.0;
  double L_ = 1.0;
};

std::vector<Sample> sample_dataset(const SyntheticTask& task, std::size_t count,
                                   std::uint64_t seed);

/// Reads a CSV with header x1..x<dx>,y.
std::vector<Sample> load_dataset_csv(const std::filesystem::path& path);

struct RiskEstimate {
  double value = 0.0;
  double standard_error = 0.0;  // zero for the closed form
  bool closed_form = false;
};

inline constexpr std::size_t kDefaultMonteCarloSamples = 100000;

/// F(w) = E_z f(w; z). Closed form for linear regression:
/// 0.5 (w - w*)^T Sigma (w - w*) + 0.5 noise^2. Monte-Carlo otherwise.
RiskEstimate population_risk(const SyntheticTask& task, std::span<const double> w,
                             std::size_t mc_samples = kDefaultMonteCarloSamples,
                             std::uint64_t seed = 0x5eed);

/// Monte-Carlo estimate for any family; used as an oracle for the closed form.
RiskEstimate population_risk_monte_carlo(const SyntheticTask& task, std::span<const double> w,
                                         std::size_t mc_samples, std::uint64_t seed);

/// Self-bounding constant c_{alpha,1}. `grad_at_zero_sup` is only used when
/// alpha == 0.
double c_alpha_constant(double alpha, double L, double grad_at_zero_sup = 0.0);

inline constexpr double kDefaultHolderRadius = 5.0;

/// Empirical Hoelder constant: the largest observed
/// ||grad f(w;z) - grad f(w';z)|| / ||w - w'||^alpha over `pairs` random
/// triples with ||w||, ||w'|| <= radius and z drawn from `pool`. Each triple is
/// followed by a few probes along the gradient-difference direction, which
/// approach the local curvature maximum. Always a lower bound on the true
/// constant restricted to the ball.
double estimate_holder_constant(const LossModel& model, std::span<const Sample> pool, double alpha,
                                std::size_t pairs, double radius, std::uint64_t seed);

/// Same, with the pool drawn from the task distribution (`pairs` samples).
double estimate_holder_constant(const LossModel& model, const SyntheticTask& task, double alpha,
                                std::size_t pairs, double radius, std::uint64_t seed);

struct SelfBoundingReport {
  std::size_t violations = 0;
  double max_ratio = 0.0;  // max ||grad|| / (c f^{alpha/(1+alpha)}) over trials
};

/// Checks ||grad f(w,z)|| <= c_{alpha,1} f(w,z)^{alpha/(1+alpha)} + 1e-9 over
/// `trials` random w in the ball of `radius` and z from `pool`.
SelfBoundingReport self_bounding_check(const LossModel& model, std::span<const Sample> pool,
                                       double alpha, double L, std::size_t trials,
                                       std::uint64_t seed, double radius = kDefaultHolderRadius);

}  // namespace dsgd
