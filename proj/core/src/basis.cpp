#include "mlfpca/basis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mlfpca/error.hpp"

namespace mlfpca {
namespace {

constexpr int kDegree = 3;
constexpr int kOrder = kDegree + 1;

// Index of the knot span containing t; the right end belongs to the last span.
int find_span(const std::vector<double>& u, double t) {
  const int n = static_cast<int>(u.size()) - kOrder - 1;  // last basis index
  if (t >= u[static_cast<std::size_t>(n + 1)]) {
    int span = n;
    while (span > kDegree && u[static_cast<std::size_t>(span)] ==
                                 u[static_cast<std::size_t>(span + 1)]) {
      --span;
    }
    return span;
  }
  const auto it = std::upper_bound(u.begin() + kDegree, u.begin() + n + 1, t);
  return static_cast<int>(it - u.begin()) - 1;
}

std::vector<double> clamped_knots(double lo, double hi,
                                  const std::vector<double>& interior) {
  std::vector<double> u(kOrder, lo);
  u.insert(u.end(), interior.begin(), interior.end());
  u.insert(u.end(), kOrder, hi);
  return u;
}

Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& gram) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  if (lambda.minCoeff() <= 1e-12 * std::max(1.0, lambda.maxCoeff())) {
    throw ValidationError(
        "degenerate spline basis: Gram matrix on the fine grid is singular");
  }
  return eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace

std::string to_string(BasisKind kind) {
  switch (kind) {
    case BasisKind::bspline_cubic:
      return "bspline-cubic";
    case BasisKind::natural_cubic:
      return "natural-cubic";
  }
  return "unknown";
}

BasisKind basis_kind_from_string(const std::string& name) {
  if (name == "bspline-cubic" || name == "bspline") return BasisKind::bspline_cubic;
  if (name == "natural-cubic" || name == "natural") return BasisKind::natural_cubic;
  throw ValidationError("unknown basis kind '" + name + "'");
}

Eigen::MatrixXd bspline_values(const std::vector<double>& u, double t,
                               int derivatives) {
  const int num_basis = static_cast<int>(u.size()) - kOrder;
  const int span = find_span(u, t);
  const int nd = std::min(derivatives, kDegree);

  // Triangular table of basis values and knot differences (de Boor).
  double ndu[kOrder][kOrder];
  double left[kOrder];
  double right[kOrder];
  ndu[0][0] = 1.0;
  for (int j = 1; j <= kDegree; ++j) {
    left[j] = t - u[static_cast<std::size_t>(span + 1 - j)];
    right[j] = u[static_cast<std::size_t>(span + j)] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(derivatives + 1, num_basis);
  double ders[kOrder][kOrder] = {};
  for (int j = 0; j <= kDegree; ++j) ders[0][j] = ndu[j][kDegree];

  double a[2][kOrder];
  for (int r = 0; r <= kDegree; ++r) {
    int s1 = 0;
    int s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= nd; ++k) {
      double d = 0.0;
      const int rk = r - k;
      const int pk = kDegree - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = (r - 1 <= pk) ? k - 1 : kDegree - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      ders[k][r] = d;
      std::swap(s1, s2);
    }
  }
  double factor = kDegree;
  for (int k = 1; k <= nd; ++k) {
    for (int j = 0; j <= kDegree; ++j) ders[k][j] *= factor;
    factor *= (kDegree - k);
  }

  for (int k = 0; k <= nd; ++k) {
    for (int j = 0; j <= kDegree; ++j) {
      out(k, span - kDegree + j) = ders[k][j];
    }
  }
  return out;
}

SplineBasis SplineBasis::build(BasisKind kind, std::span<const double> design_times,
                               std::optional<std::vector<double>> interior_knots,
                               int grid_size) {
  std::vector<double> times(design_times.begin(), design_times.end());
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  if (times.size() < 2) {
    throw ValidationError("a spline basis needs at least 2 distinct design times");
  }
  BasisSpec spec;
  spec.kind = kind;
  spec.t_min = times.front();
  spec.t_max = times.back();
  spec.grid_size = grid_size;
  if (kind == BasisKind::natural_cubic) {
    if (interior_knots && !interior_knots->empty()) {
      throw ValidationError(
          "natural cubic splines place their knots at the design times; "
          "explicit knots are not accepted");
    }
    spec.knots = times;
  } else if (interior_knots) {
    spec.knots = *interior_knots;
  } else {
    spec.knots = {0.5 * (spec.t_min + spec.t_max)};
  }
  return from_spec(spec);
}

SplineBasis SplineBasis::from_spec(const BasisSpec& spec) {
  if (!(spec.t_min < spec.t_max) || !std::isfinite(spec.t_min) ||
      !std::isfinite(spec.t_max)) {
    throw ValidationError("spline basis needs a finite range with t_min < t_max");
  }
  SplineBasis basis;
  basis.spec_ = spec;
  std::vector<double> knots = spec.knots;
  if (!std::is_sorted(knots.begin(), knots.end())) {
    throw ValidationError("spline knots must be sorted");
  }

  if (spec.kind == BasisKind::bspline_cubic) {
    for (std::size_t k = 0; k < knots.size(); ++k) {
      if (!(knots[k] > spec.t_min && knots[k] < spec.t_max)) {
        throw ValidationError("interior knot outside the open time range");
      }
      const auto mult = std::count(knots.begin(), knots.end(), knots[k]);
      if (mult > kDegree) {
        throw ValidationError("interior knot repeated more than 3 times");
      }
    }
    basis.knot_vector_ = clamped_knots(spec.t_min, spec.t_max, knots);
  } else {
    if (knots.size() < 2 || knots.front() != spec.t_min ||
        knots.back() != spec.t_max ||
        std::adjacent_find(knots.begin(), knots.end()) != knots.end()) {
      throw ValidationError(
          "natural cubic knots must be distinct and span the time range");
    }
    const std::vector<double> interior(knots.begin() + 1, knots.end() - 1);
    basis.knot_vector_ = clamped_knots(spec.t_min, spec.t_max, interior);
    // Natural splines: zero second derivative at both boundary knots.
    const Eigen::Index nb = static_cast<Eigen::Index>(basis.knot_vector_.size()) - kOrder;
    Eigen::MatrixXd constraints(nb, 2);
    constraints.col(0) = bspline_values(basis.knot_vector_, spec.t_min, 2).row(2).transpose();
    constraints.col(1) = bspline_values(basis.knot_vector_, spec.t_max, 2).row(2).transpose();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(constraints);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(nb, nb);
    basis.natural_map_ = q.rightCols(nb - 2);
  }

  const Eigen::Index p = spec.kind == BasisKind::natural_cubic
                             ? basis.natural_map_.cols()
                             : static_cast<Eigen::Index>(basis.knot_vector_.size()) - kOrder;
  if (spec.grid_size < 10 * p) {
    throw ValidationError("fine grid needs at least 10 points per basis function (" +
                          std::to_string(10 * p) + " for this basis)");
  }

  basis.grid_ = Eigen::VectorXd::LinSpaced(spec.grid_size, spec.t_min, spec.t_max);
  const Eigen::MatrixXd raw = basis.evaluate_raw(basis.grid_);
  const Eigen::MatrixXd gram = basis.grid_spacing() * (raw.transpose() * raw);
  basis.transform_ = inverse_sqrt(gram);
  basis.grid_matrix_ = raw * basis.transform_;
  return basis;
}

double SplineBasis::grid_spacing() const {
  return (spec_.t_max - spec_.t_min) / static_cast<double>(spec_.grid_size - 1);
}

void SplineBasis::check_in_range(double t) const {
  const double slack = 1e-12 * (spec_.t_max - spec_.t_min);
  if (!(t >= spec_.t_min - slack && t <= spec_.t_max + slack)) {
    std::ostringstream msg;
    msg << "time " << t << " outside basis range [" << spec_.t_min << ", "
        << spec_.t_max << "]; extrapolation is not supported";
    throw ValidationError(msg.str());
  }
}

Eigen::MatrixXd SplineBasis::evaluate_raw(const Eigen::VectorXd& times) const {
  const Eigen::Index nb = static_cast<Eigen::Index>(knot_vector_.size()) - kOrder;
  Eigen::MatrixXd bs(times.size(), nb);
  for (Eigen::Index r = 0; r < times.size(); ++r) {
    check_in_range(times(r));
    const double t = std::clamp(times(r), spec_.t_min, spec_.t_max);
    bs.row(r) = bspline_values(knot_vector_, t, 0).row(0);
  }
  if (spec_.kind == BasisKind::natural_cubic) return bs * natural_map_;
  return bs;
}

Eigen::MatrixXd SplineBasis::evaluate(const Eigen::VectorXd& times) const {
  return evaluate_raw(times) * transform_;
}

Eigen::VectorXd SplineBasis::curve_values(const Eigen::VectorXd& coefficients,
                                          const Eigen::VectorXd& times) const {
  if (coefficients.size() != dimension()) {
    throw ValidationError("coefficient vector has length " +
                          std::to_string(coefficients.size()) + ", basis has " +
                          std::to_string(dimension()));
  }
  return evaluate(times) * coefficients;
}

Eigen::VectorXd SplineBasis::grid_values(const Eigen::VectorXd& coefficients) const {
  if (coefficients.size() != dimension()) {
    throw ValidationError("coefficient vector length does not match basis dimension");
  }
  return grid_matrix_ * coefficients;
}

Eigen::VectorXd SplineBasis::from_raw_coefficients(const Eigen::VectorXd& raw) const {
  if (raw.size() != dimension()) {
    throw ValidationError("raw coefficient vector length does not match basis dimension");
  }
  return transform_.ldlt().solve(raw);
}

}  // namespace mlfpca
