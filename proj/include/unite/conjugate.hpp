#ifndef UNITE_CONJUGATE_HPP
#define UNITE_CONJUGATE_HPP

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>

#include "unite/core.hpp"

namespace unite {

/// Normal-gamma state over an unknown Gaussian mean and precision.
/// Serves both as prior (hyperparameters from the prior function) and as
/// posterior after absorbing historical records.
struct NormalGamma {
  double mu = 0.0;     // m/s
  double kappa = 1.0;  // pseudo-count, > 0
  double alpha = 1.0;  // shape, > 0
  double beta = 1.0;   // rate, > 0

  NormalGamma() = default;
  NormalGamma(double mu_, double kappa_, double alpha_, double beta_)
      : mu(mu_), kappa(kappa_), alpha(alpha_), beta(beta_) {
    if (!(kappa > 0.0) || !(alpha > 0.0) || !(beta > 0.0)) {
      throw NumericError("NormalGamma requires kappa, alpha, beta > 0 (got kappa=" +
                         std::to_string(kappa_) + " alpha=" + std::to_string(alpha_) +
                         " beta=" + std::to_string(beta_) + ")");
    }
  }
};

struct StudentT {
  double nu = 1.0;     // degrees of freedom, > 0
  double loc = 0.0;    // m/s
  double scale = 1.0;  // m/s, > 0

  StudentT() = default;
  StudentT(double nu_, double loc_, double scale_) : nu(nu_), loc(loc_), scale(scale_) {
    if (!(nu > 0.0) || !(scale > 0.0)) {
      throw NumericError("StudentT requires nu, scale > 0");
    }
  }
};

/// Count, mean, and biased variance (divisor m) of a record sample.
struct SampleStats {
  size_t m = 0;
  double mean = 0.0;
  double var_biased = 0.0;
};

inline SampleStats sample_stats(std::span<const double> records) {
  SampleStats s;
  s.m = records.size();
  if (s.m == 0) return s;
  double sum = 0.0;
  for (double t : records) sum += t;
  s.mean = sum / static_cast<double>(s.m);
  double ss = 0.0;
  for (double t : records) ss += (t - s.mean) * (t - s.mean);
  s.var_biased = ss / static_cast<double>(s.m);
  return s;
}

/// Conjugate update: absorbs m records summarized by stats. m=0 is the
/// identity.
inline NormalGamma posterior_update(const NormalGamma& prior, const SampleStats& stats) {
  if (stats.m == 0) return prior;
  const double m = static_cast<double>(stats.m);
  const double k0 = prior.kappa;
  NormalGamma post;
  post.mu = (k0 * prior.mu + m * stats.mean) / (k0 + m);
  post.kappa = k0 + m;
  post.alpha = prior.alpha + 0.5 * m;
  double d = stats.mean - prior.mu;
  post.beta = prior.beta + 0.5 * m * stats.var_biased + 0.5 * k0 * m * d * d / (k0 + m);
  return post;
}

/// Student-t posterior predictive of the next speed under a normal-gamma
/// state: nu = 2*alpha, loc = mu, scale = sqrt(beta*(kappa+1)/(alpha*kappa)).
inline StudentT posterior_predictive(const NormalGamma& ng) {
  StudentT t;
  t.nu = 2.0 * ng.alpha;
  t.loc = ng.mu;
  t.scale = std::sqrt(ng.beta * (ng.kappa + 1.0) / (ng.alpha * ng.kappa));
  return t;
}

inline double studentt_logpdf(const StudentT& dist, double t) {
  const double nu = dist.nu;
  const double q = (t - dist.loc) / dist.scale;
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
         0.5 * std::log(nu * std::numbers::pi) - std::log(dist.scale) -
         0.5 * (nu + 1.0) * std::log1p(q * q / nu);
}

/// Per-traversal negative log-likelihood of speed t under the posterior
/// predictive of ng.
inline double snll(const NormalGamma& ng, double t) {
  return -studentt_logpdf(posterior_predictive(ng), t);
}

inline double gaussian_logpdf(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// Digamma via recurrence into the asymptotic regime.
inline double digamma(double x) {
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  result += std::log(x) - 0.5 * inv -
            inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 / 240.0)));
  return result;
}

}  // namespace unite

#endif  // UNITE_CONJUGATE_HPP
