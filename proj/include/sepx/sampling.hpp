#pragma once

// Training distributions: isotropic and attractor-aligned Gaussians, per-
// coordinate Gamma laws for nonnegative systems, and Gaussians refitted to
// forward-evolved samples.

#include "sepx/dynamics.hpp"

#include <map>

namespace sepx {

enum class DistKind { isotropic, anisotropic, gamma, empirical };

inline std::string to_string(DistKind k) {
  switch (k) {
    case DistKind::isotropic: return "isotropic";
    case DistKind::anisotropic: return "anisotropic";
    case DistKind::gamma: return "gamma";
    case DistKind::empirical: return "empirical";
  }
  return "?";
}

struct Distribution {
  DistKind kind = DistKind::isotropic;
  StatePoint mean;
  /// isotropic: standard deviation; gamma: per-coordinate standard deviation.
  double sigma = 1.0;
  /// anisotropic: unit axis and the standard deviations along/across it.
  Vec axis;
  double sigma_a = 1.0;
  double sigma_b = 1.0;
  /// empirical: fitted covariance, multiplied by scale^2 when sampling.
  Mat covariance;
  double scale = 1.0;
  std::uint64_t seed = 0;

  Eigen::Index dim() const { return mean.size(); }

  /// Covariance of the Gaussian kinds.
  Mat gaussian_covariance() const {
    const Eigen::Index n = dim();
    switch (kind) {
      case DistKind::isotropic: return sigma * sigma * Mat::Identity(n, n);
      case DistKind::anisotropic:
        return sigma_b * sigma_b * Mat::Identity(n, n) + (sigma_a * sigma_a - sigma_b * sigma_b) * axis * axis.transpose();
      case DistKind::empirical: return scale * scale * covariance;
      case DistKind::gamma: break;
    }
    throw ConfigError("gamma distributions have no Gaussian covariance");
  }

  void validate() const {
    if (mean.size() < 1) throw ConfigError("distribution: empty mean");
    switch (kind) {
      case DistKind::isotropic:
      case DistKind::gamma:
        if (!(sigma > 0.0)) throw ConfigError("distribution: sigma must be > 0");
        break;
      case DistKind::anisotropic:
        if (!(sigma_a > 0.0) || !(sigma_b > 0.0)) throw ConfigError("distribution: sigma_a and sigma_b must be > 0");
        require_dim(axis.size(), mean.size(), "distribution axis");
        if (std::abs(axis.norm() - 1.0) > 1e-9) throw ConfigError("distribution: axis must be unit norm");
        break;
      case DistKind::empirical:
        require_dim(covariance.rows(), mean.size(), "distribution covariance");
        if (!(scale > 0.0)) throw ConfigError("distribution: scale must be > 0");
        break;
    }
  }
};

inline Distribution isotropic(StatePoint mean, double sigma, std::uint64_t seed = 0) {
  Distribution d;
  d.kind = DistKind::isotropic;
  d.mean = std::move(mean);
  d.sigma = sigma;
  d.seed = seed;
  return d;
}

inline Distribution gamma_per_coordinate(StatePoint mode, double sigma, std::uint64_t seed = 0) {
  Distribution d;
  d.kind = DistKind::gamma;
  d.mean = std::move(mode);
  d.sigma = sigma;
  d.seed = seed;
  return d;
}

/// Covariance sigma_B^2 I + (sigma_A^2 - sigma_B^2) u u^T with u the unit
/// vector from b to a. The mean starts at the midpoint; callers usually move it
/// onto a separatrix point.
inline Distribution anisotropic_from_attractors(const StatePoint& a, const StatePoint& b, double sigma_a,
                                                double sigma_b, std::uint64_t seed = 0) {
  require_dim(b.size(), a.size(), "anisotropic_from_attractors");
  const double gap = (a - b).norm();
  if (!(gap > 0.0)) throw ConfigError("anisotropic_from_attractors: coincident attractors");
  Distribution d;
  d.kind = DistKind::anisotropic;
  d.mean = 0.5 * (a + b);
  d.axis = (a - b) / gap;
  d.sigma_a = sigma_a;
  d.sigma_b = sigma_b;
  d.seed = seed;
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Gamma / lognormal parameterization by mode and variance.

struct GammaParams {
  double shape;  // alpha
  double rate;   // beta
};

/// Solves (alpha - 1)/beta = mode and alpha/beta^2 = var for mode > 0.
inline GammaParams gamma_from_mode_variance(double mode, double var) {
  const double beta = (mode + std::sqrt(mode * mode + 4.0 * var)) / (2.0 * var);
  return {1.0 + mode * beta, beta};
}

struct LognormalParams {
  double mu;
  double sigma;
};

/// Lognormal with the given mode and variance: exp(mu - s^2) = mode and
/// (e^{s^2} - 1) e^{2 mu + s^2} = var. With w = e^{s^2}: w^4 - w^3 = var/mode^2.
inline LognormalParams lognormal_from_mode_variance(double mode, double var) {
  const double c = var / (mode * mode);
  double lo = 1.0, hi = 2.0;
  while (hi * hi * hi * (hi - 1.0) < c) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mid * mid * mid * (mid - 1.0) < c ? lo : hi) = mid;
  }
  const double s2 = std::log(0.5 * (lo + hi));
  return {std::log(mode) + s2, std::sqrt(s2)};
}

/// Smallest mode used when a Gamma coordinate has a nonpositive mode.
inline double lognormal_mode_floor(double sigma) { return 1e-3 * sigma; }

// ---------------------------------------------------------------------------

/// Draws B points (columns). The stream depends only on (d.seed, call_index).
inline VectorBatch sample(const Distribution& d, Eigen::Index B, std::uint64_t call_index = 0) {
  if (B < 1) throw ConfigError("sample: batch size must be >= 1");
  d.validate();
  const Eigen::Index n = d.dim();
  std::mt19937_64 rng(derive_seed(d.seed, call_index));
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorBatch out(n, B);
  if (d.kind == DistKind::isotropic) {
    for (Eigen::Index b = 0; b < B; ++b)
      for (Eigen::Index k = 0; k < n; ++k) out(k, b) = d.mean[k] + d.sigma * normal(rng);
    return out;
  }
  if (d.kind == DistKind::gamma) {
    const double var = d.sigma * d.sigma;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (d.mean[k] > 0.0) {
        const auto gp = gamma_from_mode_variance(d.mean[k], var);
        std::gamma_distribution<double> g(gp.shape, 1.0 / gp.rate);
        for (Eigen::Index b = 0; b < B; ++b) out(k, b) = g(rng);
      } else {
        const auto lp = lognormal_from_mode_variance(lognormal_mode_floor(d.sigma), var);
        std::lognormal_distribution<double> g(lp.mu, lp.sigma);
        for (Eigen::Index b = 0; b < B; ++b) out(k, b) = g(rng);
      }
    }
    return out;
  }
  Eigen::LLT<Mat> llt(d.gaussian_covariance());
  if (llt.info() != Eigen::Success) throw ConfigError("sample: covariance is not positive definite");
  const Mat L = llt.matrixL();
  Mat z(n, B);
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index k = 0; k < n; ++k) z(k, b) = normal(rng);
  out = L * z;
  out.colwise() += d.mean;
  return out;
}

/// Mean and (unbiased) covariance of batch columns.
inline std::pair<Vec, Mat> batch_moments(const VectorBatch& x) {
  const Vec mu = x.rowwise().mean();
  const Mat c = x.colwise() - mu;
  const double denom = x.cols() > 1 ? static_cast<double>(x.cols() - 1) : 1.0;
  return {mu, (c * c.transpose()) / denom};
}

/// Relative ridge added to refitted covariances: 1e-6 * trace / N, with an
/// absolute floor so a fully contracted cloud stays factorizable.
inline Mat ridge_regularize(Mat cov) {
  const Eigen::Index n = cov.rows();
  const double eps = std::max(1e-6 * cov.trace() / static_cast<double>(n), 1e-12);
  cov.diagonal().array() += eps;
  return cov;
}

/// Evolves n samples for t_fwd and returns a Gaussian fitted to the result.
inline Distribution forward_invariant_adjust(const Distribution& d, const SystemSpec& s, double t_fwd,
                                             Eigen::Index n = 300) {
  if (!(t_fwd > 0.0)) throw ConfigError("forward_invariant_adjust: t_fwd must be > 0");
  require_dim(d.dim(), s.dim, "forward_invariant_adjust");
  const VectorBatch start = sample(d, n, 0xF0E);
  std::vector<Vec> kept;
  std::vector<char> ok(static_cast<std::size_t>(n), 0);
  std::vector<Vec> evolved(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    try {
      evolved[i] = integrate(s, start.col(static_cast<Eigen::Index>(i)), t_fwd);
      ok[i] = 1;
    } catch (const NonFiniteError&) {
    }
  });
  for (std::size_t i = 0; i < evolved.size(); ++i)
    if (ok[i]) kept.push_back(evolved[i]);
  const auto lost = static_cast<Eigen::Index>(evolved.size() - kept.size());
  if (10 * lost > n) throw NonFiniteError("forward_invariant_adjust: more than 10% of samples blew up");
  if (kept.size() < 2) throw NonFiniteError("forward_invariant_adjust: too few surviving samples");
  VectorBatch x(s.dim, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = kept[i];
  auto [mu, cov] = batch_moments(x);
  Distribution out;
  out.kind = DistKind::empirical;
  out.mean = mu;
  out.covariance = ridge_regularize(cov);
  out.scale = 1.0;
  out.seed = d.seed;
  return out;
}

/// Fraction of n samples falling in each basin (keys are attractor ids or
/// BasinLabel sentinels).
inline std::map<int, double> basin_fractions(const SystemSpec& s, const std::vector<Attractor>& attractors,
                                             const Distribution& d, Eigen::Index n = 200) {
  const VectorBatch x = sample(d, n, 0xBA1);
  std::vector<int> labels(static_cast<std::size_t>(n));
  parallel_for(labels.size(), [&](std::size_t i) {
    labels[i] = classify_basin(s, x.col(static_cast<Eigen::Index>(i)), attractors);
  });
  std::map<int, double> frac;
  for (int l : labels) frac[l] += 1.0 / static_cast<double>(n);
  return frac;
}

/// True if at least two basins each receive `min_fraction` of the mass.
inline bool is_bisected(const std::map<int, double>& fractions, double min_fraction = 0.2) {
  int heavy = 0;
  for (const auto& [label, f] : fractions)
    if (label >= 0 && f >= min_fraction) ++heavy;
  return heavy >= 2;
}

}  // namespace sepx
