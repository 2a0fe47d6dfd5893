#include "isr/bench.hpp"

#include "isr/parallel.hpp"

#include <boost/random/normal_distribution.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace isr {

std::string_view to_string(DistributionKind kind) {
  switch (kind) {
    case DistributionKind::Gaussian: return "gaussian";
    case DistributionKind::Banana: return "banana";
    case DistributionKind::Ring: return "ring";
    case DistributionKind::MoG: return "mog";
  }
  return "?";
}

DistributionKind distribution_from_string(std::string_view name) {
  if (name == "gaussian") return DistributionKind::Gaussian;
  if (name == "banana") return DistributionKind::Banana;
  if (name == "ring") return DistributionKind::Ring;
  if (name == "mog") return DistributionKind::MoG;
  throw std::invalid_argument("unknown distribution '" + std::string(name) + "'");
}

namespace {

constexpr double kGaussianVar = 0.1;
constexpr double kRingRadius = 2.0;
constexpr double kRingVar = 0.1;
constexpr double kMogCentre = 2.0;
constexpr double kMogVar = 0.16;

double log_normal(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * d * d / var - 0.5 * std::log(2.0 * std::numbers::pi * var);
}

double log_sum_exp(const double* v, int n) {
  double hi = v[0];
  for (int i = 1; i < n; ++i) hi = std::max(hi, v[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - hi);
  return hi + std::log(s);
}

}  // namespace

Matrix sample_target(DistributionKind kind, Index n, std::uint64_t seed) {
  if (n <= 0) throw std::invalid_argument("sample count must be > 0");
  Rng rng = make_rng(seed, 0x100 + static_cast<std::uint64_t>(kind));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 2.0 * std::numbers::pi);
  Matrix x(n, 2);
  for (Index i = 0; i < n; ++i) {
    switch (kind) {
      case DistributionKind::Gaussian: {
        const double s = std::sqrt(kGaussianVar);
        x(i, 0) = s * normal(rng);
        x(i, 1) = 3.0 + s * normal(rng);
        break;
      }
      case DistributionKind::Banana: {
        const double z1 = normal(rng);
        const double z2 = normal(rng);
        x(i, 0) = z1;
        x(i, 1) = 0.5 * z1 * z1 + 0.5 * z2 - 1.0;
        break;
      }
      case DistributionKind::Ring: {
        const double r = kRingRadius + std::sqrt(kRingVar) * normal(rng);
        const double phi = uniform(rng);
        x(i, 0) = r * std::cos(phi);
        x(i, 1) = r * std::sin(phi);
        break;
      }
      case DistributionKind::MoG: {
        const auto k = static_cast<int>(rng() % 4);
        const double s = std::sqrt(kMogVar);
        x(i, 0) = (k & 1 ? kMogCentre : -kMogCentre) + s * normal(rng);
        x(i, 1) = (k & 2 ? kMogCentre : -kMogCentre) + s * normal(rng);
        break;
      }
    }
  }
  return x;
}

Vector target_log_density(DistributionKind kind, const Matrix& x) {
  if (x.cols() != 2) throw std::invalid_argument("target densities are 2-D");
  Vector out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const double a = x(i, 0);
    const double b = x(i, 1);
    switch (kind) {
      case DistributionKind::Gaussian:
        out(i) = log_normal(a, 0.0, kGaussianVar) + log_normal(b, 3.0, kGaussianVar);
        break;
      case DistributionKind::Banana: {
        const double z2 = 2.0 * (b - 0.5 * a * a + 1.0);
        out(i) = log_normal(a, 0.0, 1.0) + log_normal(z2, 0.0, 1.0) + std::log(2.0);
        break;
      }
      case DistributionKind::Ring: {
        const double r = std::hypot(a, b);
        const double terms[2] = {log_normal(r, kRingRadius, kRingVar), log_normal(-r, kRingRadius, kRingVar)};
        out(i) = log_sum_exp(terms, 2) - std::log(2.0 * std::numbers::pi * r);
        break;
      }
      case DistributionKind::MoG: {
        double terms[4];
        for (int k = 0; k < 4; ++k) {
          const double ca = k & 1 ? kMogCentre : -kMogCentre;
          const double cb = k & 2 ? kMogCentre : -kMogCentre;
          terms[k] = std::log(0.25) + log_normal(a, ca, kMogVar) + log_normal(b, cb, kMogVar);
        }
        out(i) = log_sum_exp(terms, 4);
        break;
      }
    }
  }
  return out;
}

void KinematicsSpec::validate() const {
  for (double l : lengths) {
    if (!(l > 0)) throw std::invalid_argument("segment lengths must be > 0");
  }
  for (double v : prior_variance) {
    if (!(v > 0)) throw std::invalid_argument("prior variances must be > 0");
  }
}

Eigen::Vector2d kinematics_forward(const Eigen::Vector4d& x, const KinematicsSpec& spec) {
  const auto& l = spec.lengths;
  const double a1 = x(1);
  const double a2 = a1 + x(2);
  const double a3 = a2 + x(3);
  return {l[0] * std::sin(a1) + l[1] * std::sin(a2) + l[2] * std::sin(a3) + x(0),
          l[0] * std::cos(a1) + l[1] * std::cos(a2) + l[2] * std::cos(a3)};
}

Matrix kinematics_forward(const Matrix& x, const KinematicsSpec& spec) {
  if (x.cols() != 4) throw std::invalid_argument("kinematics input must have 4 columns");
  Matrix y(x.rows(), 2);
  for (Index i = 0; i < x.rows(); ++i) y.row(i) = kinematics_forward(Eigen::Vector4d(x.row(i).transpose()), spec).transpose();
  return y;
}

namespace {

void draw_prior(Rng& rng, std::normal_distribution<double>& normal, const KinematicsSpec& spec,
                Eigen::Vector4d& out) {
  for (int j = 0; j < 4; ++j) out(j) = std::sqrt(spec.prior_variance[static_cast<std::size_t>(j)]) * normal(rng);
}

}  // namespace

Matrix sample_prior(Index n, std::uint64_t seed, const KinematicsSpec& spec) {
  spec.validate();
  if (n < 0) throw std::invalid_argument("sample count must be >= 0");
  Rng rng = make_rng(seed, 0x200);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix x(n, 4);
  Eigen::Vector4d row;
  for (Index i = 0; i < n; ++i) {
    draw_prior(rng, normal, spec, row);
    x.row(i) = row.transpose();
  }
  return x;
}

Dataset kinematics_dataset(Index n, std::uint64_t seed, const KinematicsSpec& spec) {
  Dataset d;
  d.x = sample_prior(n, seed, spec);
  d.y = kinematics_forward(d.x, spec);
  return d;
}

RejectionResult rejection_sample(const Eigen::Vector2d& y_star, double eps, Index n_keep, std::uint64_t seed,
                                 const KinematicsSpec& spec, double min_rate, std::uint64_t probe_draws) {
  spec.validate();
  if (!(eps > 0)) throw std::invalid_argument("eps must be > 0");
  if (n_keep < 0) throw std::invalid_argument("n_keep must be >= 0");
  RejectionResult result;
  result.samples.resize(n_keep, 4);
  if (n_keep == 0) return result;

  constexpr std::uint64_t kChunk = 1 << 16;
  struct Chunk {
    std::vector<Eigen::Vector4d> kept;
    std::vector<std::uint64_t> at;
  };
  const double eps2 = eps * eps;
  const std::size_t per_round = static_cast<std::size_t>(thread_count()) * 4;
  std::uint64_t next_chunk = 0;
  Index kept = 0;
  std::uint64_t draws = 0;

  while (kept < n_keep) {
    std::vector<Chunk> round(per_round);
    parallel_for(per_round, [&](std::size_t r) {
      const std::uint64_t chunk = next_chunk + r;
      Rng rng = make_rng(seed, 0x300000 + chunk);
      boost::random::normal_distribution<double> normal(0.0, 1.0);
      const auto& l = spec.lengths;
      double sd[4];
      for (int j = 0; j < 4; ++j) sd[j] = std::sqrt(spec.prior_variance[static_cast<std::size_t>(j)]);
      Eigen::Vector4d x;
      for (std::uint64_t k = 0; k < kChunk; ++k) {
        // The vertical coordinate ignores x1, so it is tested before x1 is drawn.
        x(1) = sd[1] * normal(rng);
        x(2) = sd[2] * normal(rng);
        x(3) = sd[3] * normal(rng);
        const double a1 = x(1), a2 = a1 + x(2), a3 = a2 + x(3);
        const double dy2 = l[0] * std::cos(a1) + l[1] * std::cos(a2) + l[2] * std::cos(a3) - y_star(1);
        if (dy2 * dy2 >= eps2) continue;
        x(0) = sd[0] * normal(rng);
        const double dy1 = l[0] * std::sin(a1) + l[1] * std::sin(a2) + l[2] * std::sin(a3) + x(0) - y_star(0);
        if (dy1 * dy1 + dy2 * dy2 < eps2) {
          round[r].kept.push_back(x);
          round[r].at.push_back(k);
        }
      }
    });
    for (std::size_t r = 0; r < per_round && kept < n_keep; ++r) {
      for (std::size_t k = 0; k < round[r].kept.size() && kept < n_keep; ++k) {
        result.samples.row(kept++) = round[r].kept[k].transpose();
        if (kept == n_keep) draws += round[r].at[k] + 1;
      }
      if (kept < n_keep) draws += kChunk;
    }
    next_chunk += per_round;
    if (kept < n_keep && draws >= probe_draws &&
        static_cast<double>(kept) / static_cast<double>(draws) < min_rate) {
      std::ostringstream msg;
      msg << "rejection sampling accepted " << kept << " of " << draws
          << " draws (rate below " << min_rate << "); raise eps or move y* closer to the prior mass";
      throw std::runtime_error(msg.str());
    }
  }
  result.draws = draws;
  result.acceptance_rate = static_cast<double>(n_keep) / static_cast<double>(draws);
  return result;
}

double MmdKernel::operator()(double d2) const {
  double k = 0.0;
  for (double c : scales) k += c / (c + d2);
  return k;
}

namespace {

double row_kernel_sum(const Matrix& a, Index i, const Matrix& b, const MmdKernel& kernel, Index skip) {
  double s = 0.0;
  for (Index j = 0; j < b.rows(); ++j) {
    if (j == skip) continue;
    s += kernel((a.row(i) - b.row(j)).squaredNorm());
  }
  return s;
}

}  // namespace

double mmd(const Matrix& a, const Matrix& b, const MmdKernel& kernel) {
  if (a.rows() < 2 || b.rows() < 2) throw std::invalid_argument("mmd needs at least 2 samples per set");
  if (a.cols() != b.cols()) throw std::invalid_argument("mmd sample widths differ");
  if (kernel.scales.empty()) throw std::invalid_argument("mmd kernel has no scales");
  const Index m = a.rows();
  const Index n = b.rows();
  std::vector<double> rows(static_cast<std::size_t>(std::max(m, n)), 0.0);
  if (m == n) {
    parallel_for(static_cast<std::size_t>(m), [&](std::size_t i) {
      const Index r = static_cast<Index>(i);
      double s = 0.0;
      for (Index j = 0; j < m; ++j) {
        if (j == r) continue;
        s += kernel((a.row(r) - a.row(j)).squaredNorm()) + kernel((b.row(r) - b.row(j)).squaredNorm()) -
             kernel((a.row(r) - b.row(j)).squaredNorm()) - kernel((a.row(j) - b.row(r)).squaredNorm());
      }
      rows[i] = s;
    });
    double total = 0.0;
    for (double s : rows) total += s;
    return total / (static_cast<double>(m) * static_cast<double>(m - 1));
  }
  std::vector<double> aa(static_cast<std::size_t>(m)), bb(static_cast<std::size_t>(n)), ab(static_cast<std::size_t>(m));
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t i) {
    aa[i] = row_kernel_sum(a, static_cast<Index>(i), a, kernel, static_cast<Index>(i));
    ab[i] = row_kernel_sum(a, static_cast<Index>(i), b, kernel, -1);
  });
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    bb[i] = row_kernel_sum(b, static_cast<Index>(i), b, kernel, static_cast<Index>(i));
  });
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (double s : aa) saa += s;
  for (double s : bb) sbb += s;
  for (double s : ab) sab += s;
  const double dm = static_cast<double>(m);
  const double dn = static_cast<double>(n);
  return saa / (dm * (dm - 1)) + sbb / (dn * (dn - 1)) - 2.0 * sab / (dm * dn);
}

double resim_error(const Matrix& samples, const Eigen::Vector2d& y_star, const KinematicsSpec& spec) {
  if (samples.rows() == 0) throw std::invalid_argument("resim_error needs samples");
  const Matrix y = kinematics_forward(samples, spec);
  double total = 0.0;
  for (Index i = 0; i < y.rows(); ++i) total += (y.row(i).transpose() - y_star).squaredNorm();
  return total / static_cast<double>(y.rows());
}

MetricsReport evaluate_posterior(const Matrix& model_samples, const Matrix& reference, const Eigen::Vector2d& y_star,
                                 std::uint64_t seed, const KinematicsSpec& spec, const MmdKernel& kernel) {
  MetricsReport r;
  r.err_post_raw = mmd(model_samples, reference, kernel);
  r.err_post = std::max(0.0, r.err_post_raw);
  r.err_resim = resim_error(model_samples, y_star, spec);
  r.n_model = model_samples.rows();
  r.n_reference = reference.rows();
  r.seed = seed;
  r.kernel = kernel;
  return r;
}

}  // namespace isr
