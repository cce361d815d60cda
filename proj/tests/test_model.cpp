#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "mlfpca/error.hpp"
#include "mlfpca/model.hpp"
#include "oracles.hpp"

namespace mlfpca {
namespace {

using testing::make_tiny_instance;

double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

struct Instance {
  Dataset ds;
  SplineBasis basis;
  Designs designs;
  MultiLevelParams params;
};

// Several variables with ragged replicate counts and missing times.
Instance ragged_instance(std::uint64_t seed, int k = 2, std::vector<int> ranks = {1, 2, 0}) {
  Rng rng = make_stream(seed, {77});
  const std::vector<double> all{0, 1, 2.5, 4, 6};
  auto basis = SplineBasis::build(BasisKind::natural_cubic, all);
  auto params = testing::random_gaussian_params(basis.dimension(), k, ranks, rng);
  std::bernoulli_distribution keep(0.7);
  std::vector<std::vector<std::vector<double>>> times(ranks.size());
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    const std::size_t reps = 2 + i;
    for (std::size_t j = 0; j < reps; ++j) {
      std::vector<double> t{all[j % all.size()]};
      for (double s : all) {
        if (s != t.front() && keep(rng)) t.push_back(s);
      }
      std::sort(t.begin(), t.end());
      times[i].push_back(t);
    }
  }
  Dataset ds = testing::draw_gaussian_dataset(params, basis, times, rng);
  Designs designs = assemble_designs(ds, basis);
  return {std::move(ds), std::move(basis), std::move(designs), std::move(params)};
}

TEST(ModelDesign, Dimensions) {
  const auto inst = ragged_instance(1);
  ASSERT_EQ(inst.designs.size(), 3u);
  for (std::size_t i = 0; i < inst.designs.size(); ++i) {
    const auto& d = inst.designs[i];
    const auto& panel = inst.ds.variable(i);
    EXPECT_EQ(d.rows(), panel.total_observations());
    EXPECT_EQ(d.y, panel.stacked_values());
    const Eigen::Index l = inst.params.replicate_rank(i);
    const Eigen::MatrixXd z = loading_design(inst.params, i, d);
    EXPECT_EQ(z.rows(), d.rows());
    EXPECT_EQ(z.cols(), 2 + static_cast<Eigen::Index>(d.replicates()) * l);
    EXPECT_LT(max_abs(z.leftCols(2) - d.stacked * inst.params.theta_alpha), 1e-14);
    const Eigen::MatrixXd bd = d.block_diagonal();
    EXPECT_EQ(bd.rows(), d.rows());
    Eigen::Index col = 0;
    for (std::size_t j = 0; j < d.replicates(); ++j) {
      const auto& b = d.blocks[j];
      EXPECT_EQ(d.stacked.middleRows(d.offsets[j], b.rows()), b);
      EXPECT_EQ(bd.block(d.offsets[j], col, b.rows(), b.cols()), b);
      if (l > 0) {
        EXPECT_LT(max_abs(z.block(d.offsets[j], 2 + static_cast<Eigen::Index>(j) * l, b.rows(), l) -
                          b * inst.params.variables[i].theta_beta),
                  1e-14);
      }
      col += b.cols();
    }
    EXPECT_NEAR(bd.cwiseAbs().sum(), d.stacked.cwiseAbs().sum(), 1e-12 * d.stacked.cwiseAbs().sum());
  }
}

TEST(ModelDesign, OutOfRangeObservation) {
  const auto basis = SplineBasis::build(BasisKind::natural_cubic, std::vector<double>{0, 1, 2});
  const auto ds = Dataset::from_observations({{"v", "a", 0.0, 1.0}, {"v", "b", 3.0, 1.0}});
  EXPECT_THROW(assemble_designs(ds, basis), ValidationError);
}

TEST(ModelCovariance, StructureAndFloor) {
  const auto inst = ragged_instance(2);
  for (std::size_t i = 0; i < inst.designs.size(); ++i) {
    const auto& d = inst.designs[i];
    const Eigen::MatrixXd v = marginal_covariance(inst.params, i, d);
    EXPECT_LT(max_abs(v - v.transpose()), 1e-14);
    const double s2 = inst.params.variables[i].sigma2;
    EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(v).eigenvalues().minCoeff(),
              s2 * (1.0 - 1e-10));
    const Eigen::MatrixXd z = loading_design(inst.params, i, d);
    const Eigen::VectorXd s = gaussian_prior_variances(inst.params, i, d.replicates());
    const Eigen::MatrixXd signal = z * s.asDiagonal() * z.transpose();
    EXPECT_LT(max_abs(v - signal - s2 * Eigen::MatrixXd::Identity(d.rows(), d.rows())), 1e-12);
    const Eigen::Index rank = Eigen::FullPivLU<Eigen::MatrixXd>(signal).setThreshold(1e-10).rank();
    EXPECT_LE(rank, std::min(d.rows(), z.cols()));
  }
  MultiLevelParams flat = inst.params;
  flat.d_alpha().setZero();
  for (auto& v : flat.variables) v.d_beta.setZero();
  const auto& d = inst.designs[0];
  EXPECT_LT(max_abs(marginal_covariance(flat, 0, d) -
                    flat.variables[0].sigma2 * Eigen::MatrixXd::Identity(d.rows(), d.rows())),
            1e-15);
}

// Curves drawn through the basis have the covariance V_i.
TEST(ModelCovariance, MatchesSimulatedCurves) {
  auto inst = make_tiny_instance(3, 1, 1, 2, {0.0, 1.0, 2.0});
  const auto& d = inst.designs[0];
  ASSERT_EQ(d.rows(), 6);
  const Eigen::MatrixXd v = marginal_covariance(inst.params, 0, d);
  const auto& p = inst.params;
  const auto& vp = p.variables[0];
  Rng rng = make_stream(4, {});
  std::normal_distribution<double> normal;
  const Eigen::VectorXd t = Eigen::Vector3d(0.0, 1.0, 2.0);
  const int n = 40'000;
  Eigen::MatrixXd y(6, n);
  for (int s = 0; s < n; ++s) {
    const Eigen::VectorXd a = p.theta_alpha * (std::sqrt(p.d_alpha()(0)) * normal(rng)) * Eigen::VectorXd::Ones(1);
    for (int j = 0; j < 2; ++j) {
      const Eigen::VectorXd b = vp.theta_beta.col(0) * (std::sqrt(vp.d_beta(0)) * normal(rng));
      const Eigen::VectorXd f = inst.basis.curve_values(p.theta_mu + a + b, t);
      for (int m = 0; m < 3; ++m) y(3 * j + m, s) = f(m) + std::sqrt(vp.sigma2) * normal(rng);
    }
  }
  const Eigen::VectorXd mean = y.rowwise().mean();
  const Eigen::MatrixXd c = y.colwise() - mean;
  const Eigen::MatrixXd cov = c * c.transpose() / (n - 1.0);
  for (Eigen::Index a = 0; a < 6; ++a) {
    for (Eigen::Index b = 0; b < 6; ++b) {
      const double se = std::sqrt((v(a, a) * v(b, b) + v(a, b) * v(a, b)) / n);
      EXPECT_LT(std::abs(cov(a, b) - v(a, b)), 4.0 * se) << a << "," << b;
    }
  }
}

double mvn_logpdf(const Eigen::VectorXd& r, const Eigen::MatrixXd& v) {
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(v);
  return -0.5 * (static_cast<double>(r.size()) * std::log(2.0 * std::numbers::pi) +
                 std::log(lu.determinant()) + r.dot(lu.solve(r)));
}

TEST(ModelLikelihood, TwoObservationsByHand) {
  const auto basis = SplineBasis::build(BasisKind::natural_cubic, std::vector<double>{0, 1, 2});
  const auto ds = Dataset::from_observations({{"v", "a", 0.5, 1.0}, {"v", "b", 1.5, -0.5}});
  const Designs designs = assemble_designs(ds, basis);
  MultiLevelParams p;
  p.theta_mu = Eigen::Vector3d(0.2, -0.1, 0.4);
  p.theta_alpha = Eigen::Vector3d(1.0, 0.0, 0.0);
  p.alpha_law = GaussianLoadings{Eigen::VectorXd::Constant(1, 0.8)};
  p.variables.push_back({Eigen::Vector3d(0.0, 0.6, 0.8), Eigen::VectorXd::Constant(1, 0.3), 0.25});
  const Eigen::MatrixXd b = basis.evaluate(Eigen::Vector2d(0.5, 1.5));
  Eigen::Matrix2d v = 0.8 * (b * p.theta_alpha) * (b * p.theta_alpha).transpose();
  for (int j = 0; j < 2; ++j) {
    const double g = b.row(j).dot(p.variables[0].theta_beta.col(0));
    v(j, j) += 0.3 * g * g + 0.25;
  }
  const Eigen::VectorXd r = Eigen::Vector2d(1.0, -0.5) - b * p.theta_mu;
  EXPECT_NEAR(gaussian_marginal_loglik(p, designs), mvn_logpdf(r, v), 1e-12);
  EXPECT_NEAR(gaussian_marginal_loglik_dense(p, designs), mvn_logpdf(r, v), 1e-12);
}

TEST(ModelLikelihoodProperty, WoodburyMatchesDense) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = ragged_instance(100 + seed, 1 + static_cast<int>(seed % 3));
    const double a = gaussian_marginal_loglik(inst.params, inst.designs);
    const double b = gaussian_marginal_loglik_dense(inst.params, inst.designs);
    EXPECT_NEAR(a, b, 1e-8 * (1.0 + std::abs(b))) << "seed " << seed;
  }
}

TEST(ModelLikelihoodProperty, RotationInvariantUnderIsotropicPrior) {
  Rng rng = make_stream(6, {});
  for (int trial = 0; trial < 10; ++trial) {
    auto inst = ragged_instance(200 + trial, 3);
    inst.params.d_alpha().setConstant(0.7);
    const double before = gaussian_marginal_loglik(inst.params, inst.designs);
    MultiLevelParams q = inst.params;
    q.theta_alpha = inst.params.theta_alpha * testing::random_orthonormal(3, 3, rng);
    EXPECT_NEAR(gaussian_marginal_loglik(q, inst.designs), before, 1e-10 * std::abs(before));
  }
}

TEST(ModelLikelihood, NoiseVarianceChangesValue) {
  auto inst = ragged_instance(7);
  const double base = gaussian_marginal_loglik(inst.params, inst.designs);
  inst.params.variables[1].sigma2 *= 1.5;
  EXPECT_NE(gaussian_marginal_loglik(inst.params, inst.designs), base);
}

TEST(ModelPosteriorProperty, WoodburyMatchesDense) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = ragged_instance(300 + seed, static_cast<int>(seed % 3));
    for (std::size_t i = 0; i < inst.designs.size(); ++i) {
      const auto a = gaussian_posterior(inst.params, i, inst.designs[i]);
      const auto b = gaussian_posterior_dense(inst.params, i, inst.designs[i]);
      EXPECT_LT(max_abs(a.mean - b.mean), 1e-8 * (1.0 + max_abs(b.mean))) << seed;
      EXPECT_LT(max_abs(a.second - b.second), 1e-8 * (1.0 + max_abs(b.second))) << seed;
      EXPECT_NEAR(a.residual_sq, b.residual_sq, 1e-8 * (1.0 + b.residual_sq)) << seed;
      EXPECT_LT(max_abs(a.second - a.second.transpose()), 1e-12);
      const Eigen::MatrixXd cov = a.second - a.mean * a.mean.transpose();
      if (cov.size() > 0) {
        EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(cov).eigenvalues().minCoeff(),
                  -1e-10);
      }
    }
  }
}

TEST(ModelPosterior, MatchesQuadrature) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = make_tiny_instance(seed);
    const auto& d = inst.designs[0];
    const Eigen::MatrixXd z = loading_design(inst.params, 0, d);
    const Eigen::VectorXd s = gaussian_prior_variances(inst.params, 0, d.replicates());
    const Eigen::VectorXd r = d.y - d.stacked * inst.params.theta_mu;
    const auto q = testing::quadrature_posterior(z, s, r, inst.params.variables[0].sigma2, 40);
    const auto m = gaussian_posterior(inst.params, 0, d);
    EXPECT_LT(max_abs(m.mean - q.mean), 1e-6) << seed;
    EXPECT_LT(max_abs(m.second - q.second), 1e-6) << seed;
    EXPECT_NEAR(m.residual_sq, q.residual_sq, 1e-6) << seed;
  }
}

TEST(ModelPosterior, LowRankGaussianSamplesCovariance) {
  const auto inst = make_tiny_instance(9);
  const auto& d = inst.designs[0];
  const Eigen::MatrixXd z = loading_design(inst.params, 0, d);
  const Eigen::VectorXd s = gaussian_prior_variances(inst.params, 0, d.replicates());
  const LowRankGaussian g(z, s, inst.params.variables[0].sigma2);
  Rng rng = make_stream(10, {});
  const Eigen::VectorXd mean = Eigen::VectorXd::Zero(z.cols());
  const int n = 50'000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(z.cols(), z.cols());
  for (int k = 0; k < n; ++k) {
    const Eigen::VectorXd x = g.sample(mean, rng);
    acc += x * x.transpose();
  }
  EXPECT_LT(max_abs(acc / n - g.posterior_covariance()), 0.03 * max_abs(g.posterior_covariance()));
}

MultiLevelParams canonical(const MultiLevelParams& p) {
  return orthogonalize(p).params;
}

TEST(Orthogonalize, PreservesOperatorsAndOrders) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto inst = ragged_instance(400 + seed, 3);
    Rng rng = make_stream(seed, {401});
    std::normal_distribution<double> normal;
    MultiLevelParams p = inst.params;
    for (Eigen::Index a = 0; a < p.theta_alpha.size(); ++a) p.theta_alpha.data()[a] = normal(rng);
    for (auto& v : p.variables) {
      for (Eigen::Index a = 0; a < v.theta_beta.size(); ++a) v.theta_beta.data()[a] = normal(rng);
    }
    const Orthogonalized o = orthogonalize(p);
    const auto& q = o.params;
    const Eigen::Index k = q.variable_rank();
    EXPECT_LT(max_abs(q.theta_alpha.transpose() * q.theta_alpha - Eigen::MatrixXd::Identity(k, k)), 1e-10);
    const Eigen::MatrixXd before = p.theta_alpha * p.d_alpha().asDiagonal() * p.theta_alpha.transpose();
    const Eigen::MatrixXd after = q.theta_alpha * q.d_alpha().asDiagonal() * q.theta_alpha.transpose();
    EXPECT_LT(max_abs(before - after), 1e-10 * (1.0 + max_abs(before)));
    for (Eigen::Index c = 1; c < k; ++c) EXPECT_GE(q.d_alpha()(c - 1), q.d_alpha()(c));
    for (Eigen::Index c = 0; c < k; ++c) {
      Eigen::Index at = 0;
      q.theta_alpha.col(c).cwiseAbs().maxCoeff(&at);
      EXPECT_GT(q.theta_alpha(at, c), 0.0);
    }
    // Loadings map onto the same curves.
    EXPECT_LT(max_abs(q.theta_alpha * o.rotation.alpha - p.theta_alpha), 1e-10);
    for (std::size_t i = 0; i < p.variables.size(); ++i) {
      const auto& vb = p.variables[i];
      const auto& wb = q.variables[i];
      const Eigen::Index l = wb.theta_beta.cols();
      EXPECT_LT(max_abs(wb.theta_beta.transpose() * wb.theta_beta - Eigen::MatrixXd::Identity(l, l)), 1e-10);
      EXPECT_LT(max_abs(vb.theta_beta * vb.d_beta.asDiagonal() * vb.theta_beta.transpose() -
                        wb.theta_beta * wb.d_beta.asDiagonal() * wb.theta_beta.transpose()),
                1e-10);
      if (l > 0) EXPECT_LT(max_abs(wb.theta_beta * o.rotation.beta[i] - vb.theta_beta), 1e-10);
    }
    // The likelihood does not see the reparametrization.
    const double ll = gaussian_marginal_loglik(p, inst.designs);
    EXPECT_NEAR(gaussian_marginal_loglik(q, inst.designs), ll, 1e-9 * std::abs(ll));
    // Idempotent.
    const auto twice = canonical(q);
    EXPECT_LT(max_abs(twice.theta_alpha - q.theta_alpha), 1e-10);
    EXPECT_LT(max_abs(twice.d_alpha() - q.d_alpha()), 1e-12);
  }
}

TEST(Orthogonalize, CanonicalInputIsFixedPoint) {
  const auto inst = ragged_instance(11, 2, {2, 1, 1});
  const MultiLevelParams c = canonical(inst.params);
  const auto o = orthogonalize(c);
  EXPECT_LT(max_abs(o.params.theta_alpha - c.theta_alpha), 1e-12);
  EXPECT_LT(max_abs(o.rotation.alpha - Eigen::MatrixXd::Identity(2, 2)), 1e-12);
  for (std::size_t i = 0; i < c.variables.size(); ++i) {
    EXPECT_LT(max_abs(o.params.variables[i].theta_beta - c.variables[i].theta_beta), 1e-12);
  }
}

TEST(Orthogonalize, RotatesMomentsConsistently) {
  const auto inst = ragged_instance(12);
  MultiLevelParams p = inst.params;
  p.theta_alpha *= 1.7;
  const auto o = orthogonalize(p);
  LoadingMoments m;
  for (std::size_t i = 0; i < inst.designs.size(); ++i) {
    m.variables.push_back(gaussian_posterior(p, i, inst.designs[i]));
  }
  const LoadingMoments r = rotate_moments(m, o.rotation);
  for (std::size_t i = 0; i < inst.designs.size(); ++i) {
    const auto direct = gaussian_posterior(o.params, i, inst.designs[i]);
    EXPECT_LT(max_abs(r.variables[i].mean - direct.mean), 1e-8);
    EXPECT_LT(max_abs(r.variables[i].second - direct.second), 1e-8);
    EXPECT_LT(max_abs(rotate_loadings(m.variables[i].mean, o.rotation, i) - direct.mean), 1e-8);
  }
}

TEST(Orthogonalize, StnComponentsInheritLaws) {
  MultiLevelParams p;
  p.theta_mu = Eigen::VectorXd::Zero(3);
  p.theta_alpha = Eigen::MatrixXd::Zero(3, 2);
  p.theta_alpha(0, 0) = -1.0;
  p.theta_alpha(1, 1) = 1.0;
  p.alpha_law = StnLoadings{{{0.5, 1.0, 2.0, 5.0}, {0.0, 4.0, -1.0, 8.0}}};
  const auto o = orthogonalize(p);
  const auto& laws = o.params.stn();
  // The second law has the larger variance so it comes first, unchanged.
  EXPECT_EQ(laws[0], p.stn()[1]);
  EXPECT_DOUBLE_EQ(laws[1].xi, -0.5);
  EXPECT_DOUBLE_EQ(laws[1].lambda, -2.0);
  EXPECT_DOUBLE_EQ(laws[1].sigma2, 1.0);
}

TEST(ExtractCurves, ZeroAndUnitLoadings) {
  const auto inst = ragged_instance(13);
  const auto& p = inst.params;
  std::vector<Eigen::VectorXd> zero;
  for (std::size_t i = 0; i < inst.designs.size(); ++i) {
    zero.push_back(Eigen::VectorXd::Zero(2 + static_cast<Eigen::Index>(inst.designs[i].replicates()) *
                                                 p.replicate_rank(i)));
  }
  const Eigen::VectorXd mu = inst.basis.grid_matrix() * p.theta_mu;
  const auto c0 = extract_curves(p, zero, inst.basis, inst.ds);
  EXPECT_EQ(c0.grid, inst.basis.grid());
  for (const auto& v : c0.variables) {
    EXPECT_LT(max_abs(v.mean - mu), 1e-14);
    for (const auto& r : v.replicates) EXPECT_LT(max_abs(r - mu), 1e-14);
  }
  auto unit = zero;
  unit[1](0) = 1.0;
  unit[1](2) = 1.0;  // first replicate, first component
  const auto c1 = extract_curves(p, unit, inst.basis, inst.ds);
  const Eigen::VectorXd f = mu + inst.basis.grid_matrix() * p.theta_alpha.col(0);
  EXPECT_LT(max_abs(c1.variables[1].mean - f), 1e-12);
  EXPECT_LT(max_abs(c1.variables[1].replicates[0] -
                    (f + inst.basis.grid_matrix() * p.variables[1].theta_beta.col(0))),
            1e-12);
  EXPECT_LT(max_abs(c1.variables[1].replicates[1] - f), 1e-12);
  EXPECT_EQ(c1.variables[1].replicate_ids, (std::vector<std::string>{"r0", "r1", "r2"}));
  unit[0].resize(1);
  EXPECT_THROW(extract_curves(p, unit, inst.basis, inst.ds), ValidationError);
}

}  // namespace
}  // namespace mlfpca
