#ifndef MLFPCA_TESTS_ORACLES_HPP
#define MLFPCA_TESTS_ORACLES_HPP

// Reference computations used as independent oracles by the tests. Nothing
// here calls into the library code paths being checked.

#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "mlfpca/stn.hpp"

namespace mlfpca::testing {

/// Nodes and weights for integrals against exp(-x^2) (Golub-Welsch).
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
GaussHermiteRule gauss_hermite(int n);

/// Moments of x given r for r = Z x + e, x ~ N(0, diag(prior_variances)),
/// e ~ N(0, sigma2 I), by tensor-product Gauss-Hermite quadrature. The first
/// pass uses the prior; later passes recentre and rescale the grid on the
/// previous pass's mean and covariance. Only practical for a handful of
/// latent dimensions.
struct QuadratureMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd second;
  double residual_sq = 0.0;  // E[|r - Z x|^2 | r]
};
QuadratureMoments quadrature_posterior(const Eigen::MatrixXd& z,
                                       const Eigen::VectorXd& prior_variances,
                                       const Eigen::VectorXd& r, double sigma2, int nodes);

/// Skew-t-normal density built from Boost's Student-t and normal laws.
double stn_density_reference(double z, const StNParams& p);

/// Integral over the real line (sinh-sinh quadrature).
double integrate_real_line(const std::function<double(double)>& f);

/// CDF values at ascending points by accumulating quadrature of `density`
/// between neighbours.
std::vector<double> cdf_at_sorted(const std::vector<double>& sorted,
                                  const std::function<double(double)>& density);

/// Two-sided one-sample Kolmogorov-Smirnov statistic for ascending samples
/// with CDF values `cdf`.
double ks_statistic(const std::vector<double>& sorted, const std::vector<double>& cdf);
/// Asymptotic p-value of the KS statistic (Stephens' small-sample correction).
double ks_pvalue(double statistic, std::size_t n);

struct KsResult {
  double statistic = 0.0;
  double p_value = 0.0;
};
/// KS test of samples (any order) against a density.
KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& density);

/// Sample mean and its standard error.
struct MeanEstimate {
  double mean = 0.0;
  double se = 0.0;
};
MeanEstimate mean_with_se(const std::vector<double>& x);

/// Largest principal angle (radians) between the column spans of a and b.
double max_principal_angle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace mlfpca::testing

#endif  // MLFPCA_TESTS_ORACLES_HPP
