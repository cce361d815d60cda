#include "mlfpca/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace mlfpca {

NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& objective,
                             const Eigen::VectorXd& start,
                             const Eigen::VectorXd& initial_steps,
                             const NelderMeadOptions& options) {
  constexpr double kReflect = 1.0;
  constexpr double kExpand = 2.0;
  constexpr double kContract = 0.5;
  constexpr double kShrink = 0.5;

  const auto f = [&](const Eigen::VectorXd& x) {
    const double v = objective(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  const Eigen::Index n = start.size();
  std::vector<Eigen::VectorXd> vertex(static_cast<std::size_t>(n + 1), start);
  std::vector<double> value(static_cast<std::size_t>(n + 1));
  for (Eigen::Index k = 0; k < n; ++k) vertex[static_cast<std::size_t>(k + 1)](k) += initial_steps(k);
  for (std::size_t k = 0; k < vertex.size(); ++k) value[k] = f(vertex[k]);

  std::vector<std::size_t> order(vertex.size());
  NelderMeadResult result;
  int iter = 0;
  for (;; ++iter) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return value[a] < value[b]; });
    const auto best = order.front();
    const auto worst = order.back();
    const auto second_worst = order[order.size() - 2];

    double diameter = 0.0;
    for (const auto& v : vertex) {
      diameter = std::max(diameter, (v - vertex[best]).lpNorm<Eigen::Infinity>());
    }
    if (diameter < options.diameter_tolerance) {
      result.converged = true;
      break;
    }
    if (iter >= options.max_iterations) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t k = 0; k < vertex.size(); ++k) {
      if (k != worst) centroid += vertex[k];
    }
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd reflected = centroid + kReflect * (centroid - vertex[worst]);
    const double f_reflected = f(reflected);
    if (f_reflected < value[best]) {
      const Eigen::VectorXd expanded = centroid + kExpand * (reflected - centroid);
      const double f_expanded = f(expanded);
      if (f_expanded < f_reflected) {
        vertex[worst] = expanded;
        value[worst] = f_expanded;
      } else {
        vertex[worst] = reflected;
        value[worst] = f_reflected;
      }
      continue;
    }
    if (f_reflected < value[second_worst]) {
      vertex[worst] = reflected;
      value[worst] = f_reflected;
      continue;
    }
    // Contract towards the better of the reflected and worst points.
    const bool outside = f_reflected < value[worst];
    const Eigen::VectorXd contracted =
        outside ? Eigen::VectorXd(centroid + kContract * (reflected - centroid))
                : Eigen::VectorXd(centroid + kContract * (vertex[worst] - centroid));
    const double f_contracted = f(contracted);
    if (f_contracted < std::min(f_reflected, value[worst])) {
      vertex[worst] = contracted;
      value[worst] = f_contracted;
      continue;
    }
    for (std::size_t k = 0; k < vertex.size(); ++k) {
      if (k == best) continue;
      vertex[k] = vertex[best] + kShrink * (vertex[k] - vertex[best]);
      value[k] = f(vertex[k]);
    }
  }

  const auto best = static_cast<std::size_t>(
      std::min_element(value.begin(), value.end()) - value.begin());
  result.minimizer = vertex[best];
  result.value = value[best];
  result.iterations = iter;
  return result;
}

}  // namespace mlfpca
