#ifndef MLFPCA_STN_HPP
#define MLFPCA_STN_HPP

#include <limits>
#include <span>

#include "mlfpca/random.hpp"

namespace mlfpca {

/// Skew-t-normal law StN(xi, sigma2, lambda, nu) with density
/// 2 t_nu(z; xi, sigma2) Phi(lambda (z - xi) / sigma).
struct StNParams {
  double xi = 0.0;
  double sigma2 = 1.0;
  double lambda = 0.0;
  double nu = 30.0;

  [[nodiscard]] bool valid() const;
  friend bool operator==(const StNParams&, const StNParams&) = default;
};

struct StNLatents {
  double tau = 1.0;
  double gamma = 1.0;
};

/// Throws ValidationError unless sigma2 > 0, nu > 0 and all fields finite.
void validate(const StNParams& p);

double log_normal_cdf(double x);
double normal_pdf(double x);
double normal_cdf(double x);

double stn_log_pdf(double z, const StNParams& p);
double stn_pdf(double z, const StNParams& p);

/// E[z]; throws ValidationError when nu <= 1.
double stn_mean(const StNParams& p);
/// Var[z]; throws ValidationError when nu <= 2.
double stn_variance(const StNParams& p);

/// Draws z together with the latent (tau, gamma) of the hierarchical form
/// tau ~ Gamma(nu/2, nu/2), gamma | tau ~ TN(0, (tau + lambda^2)/tau; (0, inf)),
/// z | gamma, tau ~ N(xi + sigma lambda gamma / (tau + lambda^2), sigma2 / (tau + lambda^2)).
struct StNDraw {
  double z = 0.0;
  StNLatents latents;
};
StNDraw sample_hierarchical(const StNParams& p, Rng& rng);

/// N(mean, 1) restricted to (0, inf).
struct UnitTruncatedNormalLaw {
  double mean = 0.0;
  [[nodiscard]] double expectation() const;
  [[nodiscard]] double sample(Rng& rng) const;
};

/// Gamma law in (shape, rate) form.
struct GammaLaw {
  double shape = 1.0;
  double rate = 1.0;
  [[nodiscard]] double expectation() const { return shape / rate; }
  [[nodiscard]] double sample(Rng& rng) const;
};

/// Full conditional of gamma given alpha: TN((alpha - xi) lambda / sigma, 1; (0, inf)).
UnitTruncatedNormalLaw gamma_given_alpha(double alpha, const StNParams& p);
/// Full conditional of tau given alpha: Gamma((nu+1)/2, (nu + (alpha-xi)^2/sigma2)/2).
GammaLaw tau_given_alpha(double alpha, const StNParams& p);

/// Draw from N(mu, sigma2) conditioned on (lower, inf). Pass
/// -infinity as `lower` for an untruncated draw.
double sample_truncated_normal(double mu, double sigma2, double lower, Rng& rng);

struct StnFitOptions {
  bool fit_lambda = true;
  bool fit_nu = true;
  double nu_cap = 200.0;
  double nu_floor = 0.0;  // e.g. just above 1 when the fitted mean must exist
  double diameter_tolerance = 1e-6;
  int max_iterations = 2000;
};

struct StnFitResult {
  StNParams params;
  double log_likelihood = 0.0;
  double initial_log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
};

double stn_log_likelihood(std::span<const double> samples, const StNParams& p);

/// Maximum likelihood by Nelder-Mead over (xi, log sigma2, lambda, log nu).
/// Parameters switched off in `options` stay at their `init` values.
/// Requires at least 50 samples.
StnFitResult fit_stn_mle(std::span<const double> samples, const StNParams& init,
                         const StnFitOptions& options = {});

}  // namespace mlfpca

#endif  // MLFPCA_STN_HPP
