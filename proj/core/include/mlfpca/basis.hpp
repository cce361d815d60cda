#ifndef MLFPCA_BASIS_HPP
#define MLFPCA_BASIS_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mlfpca {

enum class BasisKind {
  bspline_cubic,  // cubic B-splines, boundary knots at the ends of the range
  natural_cubic,  // natural cubic splines, one knot per design time
};

std::string to_string(BasisKind kind);
BasisKind basis_kind_from_string(const std::string& name);

inline constexpr int kDefaultGridSize = 101;

/// Everything needed to rebuild a basis bit-for-bit.
struct BasisSpec {
  BasisKind kind = BasisKind::natural_cubic;
  /// Interior knots for bspline_cubic; all knots for natural_cubic.
  std::vector<double> knots;
  double t_min = 0.0;
  double t_max = 1.0;
  int grid_size = kDefaultGridSize;

  friend bool operator==(const BasisSpec&, const BasisSpec&) = default;
};

/// A cubic spline basis made orthonormal on an equally spaced fine grid.
///
/// With B the transformed basis evaluated on the grid and g the grid spacing,
/// g * B^T B = I, so that fine-grid Riemann sums of products of curves
/// B*theta approximate their L2 inner products. Immutable.
class SplineBasis {
 public:
  /// Builds a basis over [min(design_times), max(design_times)].
  ///
  /// For natural_cubic the knots are the design times and `interior_knots`
  /// must be empty. For bspline_cubic a missing `interior_knots` means a
  /// single knot at the centre of the range.
  static SplineBasis build(BasisKind kind, std::span<const double> design_times,
                           std::optional<std::vector<double>> interior_knots = {},
                           int grid_size = kDefaultGridSize);
  static SplineBasis from_spec(const BasisSpec& spec);

  [[nodiscard]] BasisKind kind() const { return spec_.kind; }
  [[nodiscard]] const BasisSpec& spec() const { return spec_; }
  [[nodiscard]] Eigen::Index dimension() const { return transform_.cols(); }
  [[nodiscard]] double t_min() const { return spec_.t_min; }
  [[nodiscard]] double t_max() const { return spec_.t_max; }
  [[nodiscard]] int grid_size() const { return spec_.grid_size; }
  [[nodiscard]] double grid_spacing() const;
  [[nodiscard]] const Eigen::VectorXd& grid() const { return grid_; }
  /// Transformed basis on the fine grid (grid_size x p).
  [[nodiscard]] const Eigen::MatrixXd& grid_matrix() const { return grid_matrix_; }
  /// Maps raw spline evaluations to orthonormal ones: B = B_raw * transform.
  [[nodiscard]] const Eigen::MatrixXd& transform() const { return transform_; }

  /// Transformed basis rows at `times`. Throws ValidationError for any time
  /// outside [t_min, t_max].
  [[nodiscard]] Eigen::MatrixXd evaluate(const Eigen::VectorXd& times) const;
  /// Untransformed spline rows (B-splines, or natural splines built from them).
  [[nodiscard]] Eigen::MatrixXd evaluate_raw(const Eigen::VectorXd& times) const;

  [[nodiscard]] Eigen::VectorXd curve_values(const Eigen::VectorXd& coefficients,
                                             const Eigen::VectorXd& times) const;
  /// curve_values on the fine grid.
  [[nodiscard]] Eigen::VectorXd grid_values(const Eigen::VectorXd& coefficients) const;

  /// Converts raw-basis coefficients c (curve B_raw*c) into transformed-basis
  /// coefficients.
  [[nodiscard]] Eigen::VectorXd from_raw_coefficients(const Eigen::VectorXd& raw) const;

 private:
  SplineBasis() = default;
  void check_in_range(double t) const;

  BasisSpec spec_;
  std::vector<double> knot_vector_;  // full clamped cubic knot sequence
  Eigen::MatrixXd natural_map_;      // (#bsplines x p) for natural splines, empty otherwise
  Eigen::VectorXd grid_;
  Eigen::MatrixXd transform_;
  Eigen::MatrixXd grid_matrix_;
};

/// Values of all cubic B-splines of a clamped knot vector at t, together with
/// their first `derivatives` derivatives (row d holds the d-th derivative).
Eigen::MatrixXd bspline_values(const std::vector<double>& knot_vector, double t,
                               int derivatives = 0);

}  // namespace mlfpca

#endif  // MLFPCA_BASIS_HPP
