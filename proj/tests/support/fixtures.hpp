#ifndef MLFPCA_TESTS_FIXTURES_HPP
#define MLFPCA_TESTS_FIXTURES_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlfpca/basis.hpp"
#include "mlfpca/dataset.hpp"
#include "mlfpca/model.hpp"
#include "mlfpca/random.hpp"
#include "mlfpca/simulate.hpp"

namespace mlfpca::testing {

/// p x k matrix with orthonormal columns drawn uniformly.
Eigen::MatrixXd random_orthonormal(Eigen::Index p, Eigen::Index k, Rng& rng);

/// Gaussian-variant parameters with random orthonormal components,
/// variances in [0.2, 1] and noise variance in [0.5, 1.5].
MultiLevelParams random_gaussian_params(Eigen::Index p, Eigen::Index variable_rank,
                                        const std::vector<int>& replicate_ranks, Rng& rng);

/// Draws y from the Gaussian model at the given design times, replacing the
/// values of a dataset with the same layout.
Dataset draw_gaussian_dataset(const MultiLevelParams& params, const SplineBasis& basis,
                              const std::vector<std::vector<std::vector<double>>>& times,
                              Rng& rng);

/// One random instance of the small conditioning problem: one variable,
/// `replicates` replicates observed at `times`, natural-cubic basis.
struct TinyInstance {
  Dataset ds;
  SplineBasis basis;
  Designs designs;
  MultiLevelParams params;
};
TinyInstance make_tiny_instance(std::uint64_t seed, int variable_rank = 1,
                                int replicate_rank = 1, int replicates = 2,
                                std::vector<double> times = {0.0, 1.0, 2.0});

/// The default simulation design scaled down to `variables` x `replicates`.
SimDesign small_design(std::size_t variables, std::size_t replicates, std::uint64_t seed);

/// Fresh empty directory under the system temp path.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace mlfpca::testing

#endif  // MLFPCA_TESTS_FIXTURES_HPP
