#ifndef MLFPCA_RANK_SELECT_HPP
#define MLFPCA_RANK_SELECT_HPP

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlfpca/basis.hpp"
#include "mlfpca/dataset.hpp"
#include "mlfpca/fit_gaussian.hpp"

namespace mlfpca {

struct VarianceShare {
  int component = 0;  // 1-based
  double share = 0.0;
  double cumulative = 0.0;
};

/// Shares of the (nonnegative) eigenvalues in the given order.
std::vector<VarianceShare> variance_shares(const Eigen::VectorXd& eigenvalues);
/// Smallest number of leading components whose cumulative share reaches
/// `threshold`; a threshold of 1 keeps every component.
int components_for_threshold(const std::vector<VarianceShare>& shares, double threshold);

struct RankSelection {
  int variable_rank = 0;
  std::vector<int> replicate_ranks;
  std::vector<VarianceShare> variable_shares;
  std::vector<std::string> variable_ids;
  std::vector<std::vector<VarianceShare>> replicate_shares;
  GaussianFit full_fit;
};

/// Fits the full-rank Gaussian model (ranks min(p, #design times)) and picks
/// K and each L_i by the proportion of variance explained.
RankSelection select_ranks(const Dataset& ds, const SplineBasis& basis,
                           double variable_threshold = 0.99,
                           double replicate_threshold = 0.60, const EMConfig& config = {});

/// Scree table `level,component,share,cumulative`; the level is `variable`
/// or `replicate:<variable id>`.
void write_scree_csv(const RankSelection& selection, std::ostream& out);
void write_scree_csv(const RankSelection& selection, const std::filesystem::path& path);

}  // namespace mlfpca

#endif  // MLFPCA_RANK_SELECT_HPP
