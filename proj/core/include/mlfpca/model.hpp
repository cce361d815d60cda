#ifndef MLFPCA_MODEL_HPP
#define MLFPCA_MODEL_HPP

#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mlfpca/basis.hpp"
#include "mlfpca/dataset.hpp"
#include "mlfpca/random.hpp"
#include "mlfpca/stn.hpp"

namespace mlfpca {

/// Variable-level loadings alpha_i ~ N(0, diag(variances)).
struct GaussianLoadings {
  Eigen::VectorXd variances;
};

/// Variable-level loadings alpha_ik ~ StN(components[k]), independent over k.
struct StnLoadings {
  std::vector<StNParams> components;
};

using VariableLevelLaw = std::variant<GaussianLoadings, StnLoadings>;

/// Replicate-level block for one variable.
struct VariableParams {
  Eigen::MatrixXd theta_beta;  // p x L_i
  Eigen::VectorXd d_beta;      // L_i replicate loading variances
  double sigma2 = 1.0;         // noise variance
};

/// Parameters of the multi-level reduced-rank model
///   y_ij = B_ij theta_mu + B_ij Theta_alpha alpha_i + B_ij Theta_beta_i beta_ij + eps_ij.
struct MultiLevelParams {
  Eigen::VectorXd theta_mu;     // p
  Eigen::MatrixXd theta_alpha;  // p x K
  VariableLevelLaw alpha_law = GaussianLoadings{};
  std::vector<VariableParams> variables;

  [[nodiscard]] Eigen::Index dimension() const { return theta_mu.size(); }
  [[nodiscard]] Eigen::Index variable_rank() const { return theta_alpha.cols(); }
  [[nodiscard]] Eigen::Index replicate_rank(std::size_t i) const {
    return variables.at(i).theta_beta.cols();
  }
  [[nodiscard]] bool is_gaussian() const {
    return std::holds_alternative<GaussianLoadings>(alpha_law);
  }
  /// D_alpha for the Gaussian variant; throws for the StN variant.
  [[nodiscard]] const Eigen::VectorXd& d_alpha() const;
  [[nodiscard]] Eigen::VectorXd& d_alpha();
  [[nodiscard]] const std::vector<StNParams>& stn() const;
  [[nodiscard]] std::vector<StNParams>& stn();
};

/// Basis rows and observations of one variable.
struct VariableDesign {
  std::string id;
  std::vector<Eigen::MatrixXd> blocks;  // B_ij, one per replicate
  std::vector<Eigen::Index> offsets;    // first row of replicate j in y_i
  Eigen::MatrixXd stacked;              // B_i
  Eigen::VectorXd y;                    // y_i

  [[nodiscard]] Eigen::Index rows() const { return stacked.rows(); }
  [[nodiscard]] std::size_t replicates() const { return blocks.size(); }
  /// Block-diagonal diag(B_i1, ..., B_in_i).
  [[nodiscard]] Eigen::MatrixXd block_diagonal() const;
};

using Designs = std::vector<VariableDesign>;

/// Rows ordered by (replicate, time) in dataset order. Throws ValidationError
/// if any observation lies outside the basis range.
Designs assemble_designs(const Dataset& ds, const SplineBasis& basis);

/// Conditional moments of x_i = (alpha_i, beta_i1, ..., beta_in_i) given y_i.
struct VariableMoments {
  Eigen::VectorXd mean;    // K + n_i L_i
  Eigen::MatrixXd second;  // E[x x^T | y]
  double residual_sq = 0.0;  // E[eps^T eps | y]
};

struct LoadingMoments {
  std::vector<VariableMoments> variables;
};

/// Z_i = [B_i Theta_alpha, blockdiag(B_ij Theta_beta_i)], the map from
/// loadings x_i to the mean of y_i - B_i theta_mu.
Eigen::MatrixXd loading_design(const MultiLevelParams& params, std::size_t i,
                               const VariableDesign& design);

/// Prior variances of x_i in the Gaussian variant.
Eigen::VectorXd gaussian_prior_variances(const MultiLevelParams& params, std::size_t i,
                                         std::size_t replicates);

/// Gaussian conditioning for y = Z x + e, x ~ N(m0, diag(s2)), e ~ N(0, sigma2 I),
/// carried out in the q-dimensional loading space (Woodbury form).
class LowRankGaussian {
 public:
  LowRankGaussian(const Eigen::MatrixXd& z, const Eigen::VectorXd& prior_variances,
                  double sigma2);

  /// E[x | y] for residual r = y - (fixed mean) and prior mean m0.
  [[nodiscard]] Eigen::VectorXd posterior_mean(const Eigen::VectorXd& r,
                                               const Eigen::VectorXd& m0) const;
  [[nodiscard]] Eigen::MatrixXd posterior_covariance() const;
  /// Draw from N(mean, posterior_covariance()).
  [[nodiscard]] Eigen::VectorXd sample(const Eigen::VectorXd& mean, Rng& rng) const;

  [[nodiscard]] double log_det_marginal() const;
  /// r^T V^{-1} r with V = Z diag(s2) Z^T + sigma2 I.
  [[nodiscard]] double quadratic_form(const Eigen::VectorXd& r) const;
  [[nodiscard]] double trace_marginal_inverse() const;

 private:
  Eigen::MatrixXd z_;
  Eigen::MatrixXd w_;  // Z diag(sqrt(s2))
  Eigen::VectorXd scale_;
  double sigma2_;
  Eigen::LLT<Eigen::MatrixXd> chol_;  // of sigma2 I + W^T W
};

/// V_i = B_i Theta_a D_a Theta_a^T B_i^T + Bt_i Theta_b D_b Theta_b^T Bt_i^T + sigma2 I.
/// Gaussian variant only.
Eigen::MatrixXd marginal_covariance(const MultiLevelParams& params, std::size_t i,
                                    const VariableDesign& design);

/// Sum over variables of log MVN(y_i; B_i theta_mu, V_i) using the Woodbury form.
double gaussian_marginal_loglik(const MultiLevelParams& params, const Designs& designs);
/// Same value through a dense Cholesky factorization of each V_i.
double gaussian_marginal_loglik_dense(const MultiLevelParams& params, const Designs& designs);

/// Exact conditional moments for the Gaussian variant (Woodbury form).
VariableMoments gaussian_posterior(const MultiLevelParams& params, std::size_t i,
                                   const VariableDesign& design);
/// Same moments by direct N x N conditioning; used to cross-check.
VariableMoments gaussian_posterior_dense(const MultiLevelParams& params, std::size_t i,
                                         const VariableDesign& design);

/// Linear maps applied to loadings by orthogonalize(): x_new = R x_old.
struct LoadingRotation {
  Eigen::MatrixXd alpha;              // K x K
  std::vector<Eigen::MatrixXd> beta;  // L_i x L_i per variable
};

struct Orthogonalized {
  MultiLevelParams params;
  LoadingRotation rotation;
};

/// Eigen-decomposes Theta D Theta^T at each level, replacing Theta by the
/// leading eigenvectors (descending eigenvalues, largest-magnitude entry of
/// each column positive) and D by the eigenvalues.
///
/// `alpha_variances` overrides the variable-level D (required for meaningful
/// results in the StN variant, where the loading second moments are used).
/// In the StN variant each new component inherits the law of the old
/// component it loads most heavily on, with its sign adjusted.
Orthogonalized orthogonalize(const MultiLevelParams& params,
                             const Eigen::VectorXd* alpha_variances = nullptr);

/// Applies a loading rotation to conditional moments.
LoadingMoments rotate_moments(const LoadingMoments& moments, const LoadingRotation& rotation);
Eigen::VectorXd rotate_loadings(const Eigen::VectorXd& x, const LoadingRotation& rotation,
                                std::size_t i);

/// Curves on the basis fine grid.
struct VariableCurves {
  std::string id;
  Eigen::VectorXd mean;  // mu + f_i
  std::vector<std::string> replicate_ids;
  std::vector<Eigen::VectorXd> replicates;  // mu + f_i + g_ij
};

struct FittedCurves {
  Eigen::VectorXd grid;
  std::vector<VariableCurves> variables;
};

/// Variable curve B(theta_mu + Theta_alpha alpha_i); replicate curves add
/// B Theta_beta_i beta_ij. `loadings[i]` is laid out like VariableMoments::mean.
FittedCurves extract_curves(const MultiLevelParams& params,
                            const std::vector<Eigen::VectorXd>& loadings,
                            const SplineBasis& basis, const Dataset& ds);

std::vector<Eigen::VectorXd> posterior_means(const LoadingMoments& moments);

}  // namespace mlfpca

#endif  // MLFPCA_MODEL_HPP
