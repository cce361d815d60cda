#ifndef MLFPCA_ERROR_HPP
#define MLFPCA_ERROR_HPP

#include <stdexcept>
#include <string>

namespace mlfpca {

// Bad input: malformed files, inconsistent dimensions, infeasible ranks.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A computation failed: singular systems, non-positive-definite covariances.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mlfpca

#endif  // MLFPCA_ERROR_HPP
