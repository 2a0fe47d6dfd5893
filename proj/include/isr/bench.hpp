#pragma once

#include "isr/random.hpp"
#include "isr/train.hpp"

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace isr {

enum class DistributionKind { Gaussian, Banana, Ring, MoG };

std::string_view to_string(DistributionKind kind);
DistributionKind distribution_from_string(std::string_view name);

/// n x 2 i.i.d. draws.
///   gaussian  N([0, 3], 0.1 I)
///   banana    z ~ N(0, I), x = (z1, z1^2 / 2 + z2 / 2 - 1)
///   ring      r ~ N(2, 0.1), phi ~ U[0, 2 pi), x = r (cos phi, sin phi)
///   mog       equal mixture at (+-2, +-2), covariance 0.16 I
Matrix sample_target(DistributionKind kind, Index n, std::uint64_t seed);

/// Exact log-density per row. For the ring the negligible r < 0 branch is dropped.
Vector target_log_density(DistributionKind kind, const Matrix& x);

/// Planar arm on a vertical rail.
struct KinematicsSpec {
  std::array<double, 3> lengths{0.5, 0.5, 1.0};
  std::array<double, 4> prior_variance{0.0625, 0.25, 0.25, 0.25};

  void validate() const;
};

Eigen::Vector2d kinematics_forward(const Eigen::Vector4d& x, const KinematicsSpec& spec = {});
/// Row-wise forward model for an n x 4 matrix.
Matrix kinematics_forward(const Matrix& x, const KinematicsSpec& spec = {});

Matrix sample_prior(Index n, std::uint64_t seed, const KinematicsSpec& spec = {});
Dataset kinematics_dataset(Index n, std::uint64_t seed, const KinematicsSpec& spec = {});

struct RejectionResult {
  Matrix samples;
  double acceptance_rate = 0.0;
  std::uint64_t draws = 0;
};

/// Prior draws whose end point lies within eps of y_star, in deterministic
/// order. Throws when the acceptance rate falls below min_rate after
/// probe_draws draws.
RejectionResult rejection_sample(const Eigen::Vector2d& y_star, double eps, Index n_keep,
                                 std::uint64_t seed, const KinematicsSpec& spec = {},
                                 double min_rate = 1e-7, std::uint64_t probe_draws = 100'000'000);

/// Inverse multiquadric mixture k(a, b) = sum_c c / (c + |a - b|^2).
struct MmdKernel {
  std::vector<double> scales{0.05, 0.2, 0.9};

  double operator()(double squared_distance) const;
};

/// Unbiased squared-MMD estimate. Equal sample sizes use the paired
/// U-statistic, which is exactly zero for identical sets.
double mmd(const Matrix& a, const Matrix& b, const MmdKernel& kernel = {});

/// Mean of |forward(x) - y_star|^2 over rows.
double resim_error(const Matrix& samples, const Eigen::Vector2d& y_star, const KinematicsSpec& spec = {});

struct MetricsReport {
  double err_post = 0.0;      // max(raw, 0)
  double err_post_raw = 0.0;  // estimator value as computed
  double err_resim = 0.0;
  bool has_resim = true;
  double nll = 0.0;
  bool has_nll = false;
  Index n_model = 0;
  Index n_reference = 0;
  std::uint64_t seed = 0;
  MmdKernel kernel;
};

MetricsReport evaluate_posterior(const Matrix& model_samples, const Matrix& reference,
                                 const Eigen::Vector2d& y_star, std::uint64_t seed,
                                 const KinematicsSpec& spec = {}, const MmdKernel& kernel = {});

}  // namespace isr
