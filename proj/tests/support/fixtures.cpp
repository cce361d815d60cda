#include "fixtures.hpp"

#include <random>
#include <utility>

namespace mlfpca::testing {

namespace {

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Eigen::VectorXd normal_vector(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

}  // namespace

Eigen::MatrixXd random_orthonormal(Eigen::Index p, Eigen::Index k, Rng& rng) {
  Eigen::MatrixXd g(p, k);
  for (Eigen::Index j = 0; j < k; ++j) g.col(j) = normal_vector(p, rng);
  if (k == 0) return g;
  const Eigen::MatrixXd q =
      Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(p, k);
  return q;
}

MultiLevelParams random_gaussian_params(Eigen::Index p, Eigen::Index variable_rank,
                                        const std::vector<int>& replicate_ranks, Rng& rng) {
  MultiLevelParams params;
  params.theta_mu = normal_vector(p, rng);
  params.theta_alpha = random_orthonormal(p, variable_rank, rng);
  Eigen::VectorXd d(variable_rank);
  for (Eigen::Index k = 0; k < variable_rank; ++k) d(k) = uniform(rng, 0.2, 1.0);
  params.alpha_law = GaussianLoadings{d};
  for (int l : replicate_ranks) {
    VariableParams v;
    v.theta_beta = random_orthonormal(p, l, rng);
    v.d_beta.resize(l);
    for (int k = 0; k < l; ++k) v.d_beta(k) = uniform(rng, 0.2, 1.0);
    v.sigma2 = uniform(rng, 0.5, 1.5);
    params.variables.push_back(std::move(v));
  }
  return params;
}

Dataset draw_gaussian_dataset(const MultiLevelParams& params, const SplineBasis& basis,
                              const std::vector<std::vector<std::vector<double>>>& times,
                              Rng& rng) {
  std::normal_distribution<double> normal;
  std::vector<Observation> obs;
  const auto k = params.variable_rank();
  const Eigen::VectorXd& d_alpha = params.d_alpha();
  for (std::size_t i = 0; i < times.size(); ++i) {
    Eigen::VectorXd alpha(k);
    for (Eigen::Index c = 0; c < k; ++c) alpha(c) = std::sqrt(d_alpha(c)) * normal(rng);
    const VariableParams& v = params.variables[i];
    const Eigen::VectorXd var_coef = params.theta_mu + params.theta_alpha * alpha;
    for (std::size_t j = 0; j < times[i].size(); ++j) {
      Eigen::VectorXd beta(v.d_beta.size());
      for (Eigen::Index c = 0; c < beta.size(); ++c) beta(c) = std::sqrt(v.d_beta(c)) * normal(rng);
      const Eigen::VectorXd coef = var_coef + v.theta_beta * beta;
      const Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(
          times[i][j].data(), static_cast<Eigen::Index>(times[i][j].size()));
      const Eigen::VectorXd mean = basis.curve_values(coef, t);
      for (Eigen::Index m = 0; m < t.size(); ++m) {
        obs.push_back({"v" + std::to_string(i), "r" + std::to_string(j), t(m),
                       mean(m) + std::sqrt(v.sigma2) * normal(rng)});
      }
    }
  }
  return Dataset::from_observations(std::move(obs));
}

TinyInstance make_tiny_instance(std::uint64_t seed, int variable_rank, int replicate_rank,
                                int replicates, std::vector<double> times) {
  Rng rng = make_stream(seed, {0xC0FFEE});
  SplineBasis basis = SplineBasis::build(BasisKind::natural_cubic, times);
  MultiLevelParams params =
      random_gaussian_params(basis.dimension(), variable_rank, {replicate_rank}, rng);
  std::vector<std::vector<std::vector<double>>> layout(
      1, std::vector<std::vector<double>>(replicates, times));
  Dataset ds = draw_gaussian_dataset(params, basis, layout, rng);
  Designs designs = assemble_designs(ds, basis);
  return {std::move(ds), std::move(basis), std::move(designs), std::move(params)};
}

SimDesign small_design(std::size_t variables, std::size_t replicates, std::uint64_t seed) {
  SimDesign d = default_preset();
  d.variables = variables;
  d.replicates = replicates;
  d.seed = seed;
  return d;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("mlfpca_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace mlfpca::testing
