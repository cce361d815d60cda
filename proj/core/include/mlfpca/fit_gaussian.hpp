#ifndef MLFPCA_FIT_GAUSSIAN_HPP
#define MLFPCA_FIT_GAUSSIAN_HPP

#include <filesystem>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "mlfpca/basis.hpp"
#include "mlfpca/dataset.hpp"
#include "mlfpca/model.hpp"

namespace mlfpca {

inline constexpr double kSigma2Floor = 1e-12;

struct EMConfig {
  int max_iterations = 500;
  double loglik_rel_tolerance = 1e-8;
  bool orthogonalize_each_iteration = false;
  double ridge_penalty_init = 1e-4;
  int threads = 1;

  void validate() const;
};

struct Initialization {
  MultiLevelParams params;  // Gaussian variable-level law
  std::vector<Eigen::VectorXd> loadings;
  Eigen::MatrixXd alpha_scores;  // M x K principal component scores
};

/// Least-squares and PCA start: grand-mean spline, per-variable coefficient
/// PCA for Theta_alpha, per-replicate ridge fits and PCA for Theta_beta_i,
/// residual variance for sigma_i^2. `replicate_ranks` has one entry per
/// variable, or a single entry applied to all.
Initialization initialize(const Dataset& ds, const SplineBasis& basis, const Designs& designs,
                          int variable_rank, const std::vector<int>& replicate_ranks,
                          double ridge);

/// Exact conditional moments for every variable.
LoadingMoments e_step_gaussian(const MultiLevelParams& params, const Designs& designs,
                               int threads = 1);

/// One ECM pass: D_alpha (Gaussian law only), D_beta_i, sigma_i^2, then
/// theta_mu, the columns of Theta_alpha in turn, and the columns of each
/// Theta_beta_i in turn, each holding the others at their latest values.
MultiLevelParams m_step_gaussian(const LoadingMoments& moments, const Designs& designs,
                                 const MultiLevelParams& current);

struct EMTraceRow {
  int iteration = 0;
  double loglik = 0.0;
  double delta = 0.0;  // change from the previous row; NaN for the first
};

struct GaussianFit {
  MultiLevelParams params;
  LoadingMoments moments;
  std::vector<EMTraceRow> trace;
  int iterations = 0;
  bool converged = false;
  double log_likelihood = 0.0;
};

GaussianFit fit_multilevel_gaussian(const Dataset& ds, const SplineBasis& basis,
                                    int variable_rank, const std::vector<int>& replicate_ranks,
                                    const EMConfig& config = {});
/// Runs EM from the supplied parameters.
GaussianFit fit_multilevel_gaussian_from(const MultiLevelParams& start, const Designs& designs,
                                         const EMConfig& config = {});

/// Independent per-variable reduced-rank fits with free means (K = 0).
struct SingleLevelFit {
  std::vector<GaussianFit> variables;
};

SingleLevelFit fit_singlelevel_gaussian(const Dataset& ds, const SplineBasis& basis,
                                        const std::vector<int>& replicate_ranks,
                                        const EMConfig& config = {});

FittedCurves single_level_curves(const SingleLevelFit& fit, const SplineBasis& basis,
                                 const Dataset& ds);

void write_em_trace(const std::vector<EMTraceRow>& trace, std::ostream& out);
void write_em_trace(const std::vector<EMTraceRow>& trace, const std::filesystem::path& path);

/// Expands a rank list of length 1 to one entry per variable and checks bounds.
std::vector<int> expand_ranks(const std::vector<int>& ranks, std::size_t variables,
                              Eigen::Index dimension);

}  // namespace mlfpca

#endif  // MLFPCA_FIT_GAUSSIAN_HPP
