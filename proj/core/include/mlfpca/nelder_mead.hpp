#ifndef MLFPCA_NELDER_MEAD_HPP
#define MLFPCA_NELDER_MEAD_HPP

#include <functional>

#include <Eigen/Dense>

namespace mlfpca {

struct NelderMeadOptions {
  /// Stop once every vertex lies within this max-norm distance of the best.
  double diameter_tolerance = 1e-6;
  int max_iterations = 2000;
};

struct NelderMeadResult {
  Eigen::VectorXd minimizer;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Downhill simplex minimization. `initial_steps` gives the offset of each
/// starting vertex from `start` along its coordinate axis. Non-finite
/// objective values are treated as +infinity.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                             const Eigen::VectorXd& start,
                             const Eigen::VectorXd& initial_steps,
                             const NelderMeadOptions& options = {});

}  // namespace mlfpca

#endif  // MLFPCA_NELDER_MEAD_HPP
