#ifndef MLFPCA_FIT_STN_HPP
#define MLFPCA_FIT_STN_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlfpca/basis.hpp"
#include "mlfpca/dataset.hpp"
#include "mlfpca/model.hpp"
#include "mlfpca/random.hpp"
#include "mlfpca/stn.hpp"

namespace mlfpca {

struct GibbsConfig {
  int sweeps = 100;   // S, per MCEM iteration
  int burn_in = 20;
  std::uint64_t seed = 1;
  int mcem_iterations = 2000;  // upper bound on MCEM iterations
  int convergence_window = 50;
  double convergence_rel_change = 1e-3;
  bool warm_start = true;  // carry chains across MCEM iterations
  int threads = 1;
  double ridge_penalty_init = 1e-4;
  /// Simplex settings for the per-component skew-t-normal fits. The nu floor
  /// keeps the fitted law's mean finite so it can be recentred.
  StnFitOptions stn_fit = {true, true, 200.0, 1.05, 1e-6, 2000};
  /// Starting laws are fit to the initial loadings unless this is set, in
  /// which case every component starts from it (lambda/nu are kept fixed if
  /// the corresponding stn_fit flag is off).
  std::optional<StNParams> initial_law;

  void validate() const;
};

/// Current draws of one variable's chain.
struct VariableChain {
  Eigen::VectorXd x;      // (alpha_i, beta_i1, ..., beta_in_i)
  Eigen::VectorXd tau;    // K, positive
  Eigen::VectorXd gamma;  // K, positive
};

/// Chains plus post-burn-in sums of x, x x^T and eps^T eps.
struct GibbsState {
  std::vector<VariableChain> chains;
  std::vector<Eigen::VectorXd> sum_x;
  std::vector<Eigen::MatrixXd> sum_xx;
  std::vector<double> sum_eps;
  int accumulated = 0;

  void reset_sums();
};

/// Chains started at the given loadings with tau = 1 and gamma at its
/// conditional mean.
GibbsState initial_gibbs_state(const MultiLevelParams& params,
                               const std::vector<Eigen::VectorXd>& loadings);

/// One sweep for variable i: (alpha_i, beta_i) jointly from their Gaussian
/// conditional given (tau_i, gamma_i), then each gamma_ik, then each tau_ik.
void gibbs_sweep(VariableChain& chain, const MultiLevelParams& params, std::size_t i,
                 const VariableDesign& design, Rng& rng);

struct McEStep {
  LoadingMoments moments;
  /// Post-burn-in alpha draws pooled over variables, one vector per component.
  std::vector<std::vector<double>> alpha_draws;
};

/// Runs config.sweeps sweeps per variable from `state` (updated in place) and
/// averages the post-burn-in draws. Each variable uses the stream derived from
/// (seed, variable, iteration).
McEStep mc_e_step(const MultiLevelParams& params, const Designs& designs,
                  const GibbsConfig& config, GibbsState& state, int iteration);

/// Shift x -> x - s in a set of moments (s applies to the alpha block).
void shift_alpha_moments(LoadingMoments& moments, const Eigen::VectorXd& shift);

/// Fits each component law to its draws, recentres it to mean zero (folding
/// Theta_alpha * m into theta_mu and shifting the moments), then applies the
/// Gaussian M-step for the remaining blocks. `moments` is shifted in place.
MultiLevelParams m_step_stn(LoadingMoments& moments,
                            const std::vector<std::vector<double>>& alpha_draws,
                            const Designs& designs, const MultiLevelParams& current,
                            const StnFitOptions& options = {});

struct StnTraceRow {
  int iteration = 0;
  std::string block;
  std::string statistic;
  double value = 0.0;
};

struct StnFit {
  MultiLevelParams params;
  LoadingMoments moments;
  std::vector<StnTraceRow> trace;
  std::vector<double> relative_changes;  // per MCEM iteration
  int iterations = 0;
  bool converged = false;
};

StnFit fit_multilevel_stn(const Dataset& ds, const SplineBasis& basis, int variable_rank,
                          const std::vector<int>& replicate_ranks,
                          const GibbsConfig& config = {});

void write_stn_trace(const std::vector<StnTraceRow>& trace, std::ostream& out);
void write_stn_trace(const std::vector<StnTraceRow>& trace, const std::filesystem::path& path);

}  // namespace mlfpca

#endif  // MLFPCA_FIT_STN_HPP
