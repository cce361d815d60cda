#include "mlfpca/stn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "mlfpca/error.hpp"
#include "mlfpca/nelder_mead.hpp"

namespace mlfpca {
namespace {

constexpr double kLogTwo = std::numbers::ln2;
constexpr double kInvSqrt2 = 0.7071067811865475244;

// Constant part of the log Student-t density for (nu, sigma2).
double log_t_constant(double nu, double sigma2) {
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
         0.5 * std::log(nu * std::numbers::pi * sigma2);
}

// Student-t density with unit scale.
double std_t_pdf(double w, double nu) {
  return std::exp(log_t_constant(nu, 1.0) - 0.5 * (nu + 1.0) * std::log1p(w * w / nu));
}

// E[w] for the standardized law StN(0, 1, lambda, nu) with lambda > 0.
double standardized_mean(double lambda, double nu) {
  using boost::math::quadrature::gauss_kronrod;
  constexpr double kSplit = 50.0;
  // The symmetric part integrates to zero, leaving the even integrand
  // w t(w) (2 Phi(lambda w) - 1) over the half line.
  const auto body = [&](double w) {
    return w * std_t_pdf(w, nu) * (2.0 * normal_cdf(lambda * w) - 1.0);
  };
  double err = 0.0;
  const double inner = gauss_kronrod<double, 61>::integrate(body, 0.0, kSplit, 20, 1e-13, &err);
  // Tail: closed form for w t(w), minus the Gaussian-damped remainder.
  const double t_tail = std_t_pdf(kSplit, nu) * (nu + kSplit * kSplit) / (nu - 1.0);
  const auto remainder = [&](double w) {
    return w * std_t_pdf(w, nu) * normal_cdf(-lambda * w);
  };
  const double damped = gauss_kronrod<double, 61>::integrate(
      remainder, kSplit, std::numeric_limits<double>::infinity(), 20, 1e-13, &err);
  return 2.0 * (inner + t_tail - 2.0 * damped);
}

}  // namespace

bool StNParams::valid() const {
  return std::isfinite(xi) && std::isfinite(sigma2) && std::isfinite(lambda) &&
         std::isfinite(nu) && sigma2 > 0.0 && nu > 0.0;
}

void validate(const StNParams& p) {
  if (!p.valid()) {
    throw ValidationError("invalid skew-t-normal parameters: need finite values, "
                          "sigma2 > 0 and nu > 0");
  }
}

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double log_normal_cdf(double x) {
  if (x > -30.0) return std::log(0.5 * std::erfc(-x * kInvSqrt2));
  // Asymptotic series of the Mills ratio.
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log1p(-1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2));
}

double stn_log_pdf(double z, const StNParams& p) {
  const double sigma = std::sqrt(p.sigma2);
  const double d = z - p.xi;
  return kLogTwo + log_t_constant(p.nu, p.sigma2) -
         0.5 * (p.nu + 1.0) * std::log1p(d * d / (p.nu * p.sigma2)) +
         log_normal_cdf(p.lambda * d / sigma);
}

double stn_pdf(double z, const StNParams& p) { return std::exp(stn_log_pdf(z, p)); }

double stn_mean(const StNParams& p) {
  validate(p);
  if (p.nu <= 1.0) throw ValidationError("skew-t-normal mean requires nu > 1");
  if (p.lambda == 0.0) return p.xi;
  const double sigma = std::sqrt(p.sigma2);
  const double m = standardized_mean(std::abs(p.lambda), p.nu);
  return p.xi + sigma * (p.lambda > 0.0 ? m : -m);
}

double stn_variance(const StNParams& p) {
  validate(p);
  if (p.nu <= 2.0) throw ValidationError("skew-t-normal variance requires nu > 2");
  // Even moments do not depend on lambda: 2 Phi(lambda w) - 1 is odd.
  const double shift = stn_mean(p) - p.xi;
  return p.sigma2 * p.nu / (p.nu - 2.0) - shift * shift;
}

double GammaLaw::sample(Rng& rng) const {
  std::gamma_distribution<double> dist(shape, 1.0 / rate);
  return dist(rng);
}

double UnitTruncatedNormalLaw::expectation() const {
  // m + phi(m) / Phi(m), evaluated in log space for very negative m.
  const double log_ratio =
      -0.5 * mean * mean - 0.5 * std::log(2.0 * std::numbers::pi) - log_normal_cdf(mean);
  return mean + std::exp(log_ratio);
}

double UnitTruncatedNormalLaw::sample(Rng& rng) const {
  return sample_truncated_normal(mean, 1.0, 0.0, rng);
}

UnitTruncatedNormalLaw gamma_given_alpha(double alpha, const StNParams& p) {
  return {(alpha - p.xi) * p.lambda / std::sqrt(p.sigma2)};
}

GammaLaw tau_given_alpha(double alpha, const StNParams& p) {
  const double d = alpha - p.xi;
  return {0.5 * (p.nu + 1.0), 0.5 * (p.nu + d * d / p.sigma2)};
}

double sample_truncated_normal(double mu, double sigma2, double lower, Rng& rng) {
  const double sigma = std::sqrt(sigma2);
  if (lower == -std::numeric_limits<double>::infinity()) {
    std::normal_distribution<double> normal(mu, sigma);
    return normal(rng);
  }
  const double a = (lower - mu) / sigma;  // standardized truncation point
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (normal_cdf(a) < 0.999) {
    // Inverse CDF on the upper tail: z = Phi^{-1}(1 - u Phi(-a)).
    const double upper_mass = normal_cdf(-a);
    double z = a;
    do {
      double u = unif(rng);
      while (u == 0.0) u = unif(rng);
      z = std::sqrt(2.0) * boost::math::erfc_inv(2.0 * u * upper_mass);
    } while (!(z > a));
    return mu + sigma * z;
  }
  // Exponential proposal with the optimal rate for the tail beyond a.
  const double rate = 0.5 * (a + std::sqrt(a * a + 4.0));
  std::exponential_distribution<double> expo(rate);
  while (true) {
    const double z = a + expo(rng);
    const double accept = std::exp(-0.5 * (z - rate) * (z - rate));
    if (unif(rng) <= accept && z > a) return mu + sigma * z;
  }
}

StNDraw sample_hierarchical(const StNParams& p, Rng& rng) {
  StNDraw draw;
  const double lambda2 = p.lambda * p.lambda;
  draw.latents.tau = GammaLaw{0.5 * p.nu, 0.5 * p.nu}.sample(rng);
  while (!(draw.latents.tau > 0.0)) draw.latents.tau = GammaLaw{0.5 * p.nu, 0.5 * p.nu}.sample(rng);
  const double precision = draw.latents.tau + lambda2;
  draw.latents.gamma =
      sample_truncated_normal(0.0, precision / draw.latents.tau, 0.0, rng);
  const double mean = p.xi + std::sqrt(p.sigma2) * p.lambda * draw.latents.gamma / precision;
  std::normal_distribution<double> normal(mean, std::sqrt(p.sigma2 / precision));
  draw.z = normal(rng);
  return draw;
}

double stn_log_likelihood(std::span<const double> samples, const StNParams& p) {
  const double sigma = std::sqrt(p.sigma2);
  const double c = kLogTwo + log_t_constant(p.nu, p.sigma2);
  const double half_nu1 = 0.5 * (p.nu + 1.0);
  const double inv_nu_s2 = 1.0 / (p.nu * p.sigma2);
  const double skew = p.lambda / sigma;
  double total = 0.0;
  for (const double z : samples) {
    const double d = z - p.xi;
    total += -half_nu1 * std::log1p(d * d * inv_nu_s2) + log_normal_cdf(skew * d);
  }
  return total + c * static_cast<double>(samples.size());
}

StnFitResult fit_stn_mle(std::span<const double> samples, const StNParams& init,
                         const StnFitOptions& options) {
  if (samples.size() < 50) {
    throw ValidationError("skew-t-normal fit needs at least 50 samples, got " +
                          std::to_string(samples.size()));
  }
  validate(init);

  StnFitResult result;
  result.initial_log_likelihood = stn_log_likelihood(samples, init);
  if (!std::isfinite(result.initial_log_likelihood)) {
    throw ValidationError("skew-t-normal fit: log-likelihood is not finite at the initial values");
  }

  // Free coordinates, in the order (xi, log sigma2, lambda, log nu).
  std::vector<int> free = {0, 1};
  if (options.fit_lambda) free.push_back(2);
  if (options.fit_nu) free.push_back(3);
  const Eigen::Index n = static_cast<Eigen::Index>(free.size());

  const auto unpack = [&](const Eigen::VectorXd& x) {
    StNParams p = init;
    for (Eigen::Index k = 0; k < n; ++k) {
      switch (free[static_cast<std::size_t>(k)]) {
        case 0: p.xi = x(k); break;
        case 1: p.sigma2 = std::exp(x(k)); break;
        case 2: p.lambda = x(k); break;
        case 3: p.nu = std::clamp(std::exp(x(k)), options.nu_floor, options.nu_cap); break;
      }
    }
    return p;
  };
  const double start_nu = std::clamp(init.nu, options.nu_floor, options.nu_cap);
  Eigen::VectorXd start(n);
  Eigen::VectorXd steps(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    switch (free[static_cast<std::size_t>(k)]) {
      case 0: start(k) = init.xi; steps(k) = 0.5 * std::sqrt(init.sigma2); break;
      case 1: start(k) = std::log(init.sigma2); steps(k) = 0.5; break;
      case 2: start(k) = init.lambda; steps(k) = 0.5; break;
      case 3: start(k) = std::log(start_nu); steps(k) = 0.5; break;
    }
  }
  const auto objective = [&](const Eigen::VectorXd& x) {
    const StNParams p = unpack(x);
    if (!(p.sigma2 > 0.0) || !(p.nu > 0.0)) return std::numeric_limits<double>::infinity();
    return -stn_log_likelihood(samples, p);
  };

  NelderMeadOptions nm;
  nm.diameter_tolerance = options.diameter_tolerance;
  nm.max_iterations = options.max_iterations;
  NelderMeadResult best = nelder_mead(objective, start, steps, nm);
  int total_iterations = best.iterations;
  // Restart from the optimum to guard against a collapsed simplex.
  for (int restart = 0; restart < 2 && total_iterations < options.max_iterations; ++restart) {
    nm.max_iterations = options.max_iterations - total_iterations;
    NelderMeadResult again = nelder_mead(objective, best.minimizer, 0.1 * steps, nm);
    total_iterations += again.iterations;
    const bool improved = again.value < best.value - 1e-10 * std::abs(best.value);
    if (again.value < best.value) best = again;
    if (!improved) break;
  }

  result.params = unpack(best.minimizer);
  result.log_likelihood = -best.value;
  result.iterations = total_iterations;
  result.converged = best.converged;
  if (result.log_likelihood < result.initial_log_likelihood) {
    result.params = init;
    result.log_likelihood = result.initial_log_likelihood;
  }
  return result;
}

}  // namespace mlfpca
