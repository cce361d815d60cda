#include "mlfpca/model.hpp"

#include <cmath>

#include "mlfpca/error.hpp"

namespace mlfpca {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Eigen::Index loading_count(const MultiLevelParams& params, std::size_t i,
                           std::size_t replicates) {
  return params.variable_rank() +
         static_cast<Eigen::Index>(replicates) * params.replicate_rank(i);
}

void check_variable(const MultiLevelParams& params, std::size_t i) {
  if (i >= params.variables.size()) {
    throw ValidationError("variable index " + std::to_string(i) +
                          " out of range for the parameter set");
  }
}

// Eigenvectors of a symmetric matrix for its `count` largest eigenvalues, in
// descending order, with the largest-magnitude entry of each column positive.
void leading_eigen(const Eigen::MatrixXd& sym, Eigen::Index count, Eigen::MatrixXd& vectors,
                   Eigen::VectorXd& values) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (sym + sym.transpose()));
  const Eigen::Index p = sym.rows();
  vectors.resize(p, count);
  values.resize(count);
  for (Eigen::Index k = 0; k < count; ++k) {
    const Eigen::Index src = p - 1 - k;
    Eigen::VectorXd v = eig.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    vectors.col(k) = v;
    values(k) = std::max(0.0, eig.eigenvalues()(src));
  }
}

}  // namespace

const Eigen::VectorXd& MultiLevelParams::d_alpha() const {
  if (const auto* g = std::get_if<GaussianLoadings>(&alpha_law)) return g->variances;
  throw ValidationError("D_alpha requested for a skew-t-normal parameter set");
}

Eigen::VectorXd& MultiLevelParams::d_alpha() {
  if (auto* g = std::get_if<GaussianLoadings>(&alpha_law)) return g->variances;
  throw ValidationError("D_alpha requested for a skew-t-normal parameter set");
}

const std::vector<StNParams>& MultiLevelParams::stn() const {
  if (const auto* s = std::get_if<StnLoadings>(&alpha_law)) return s->components;
  throw ValidationError("skew-t-normal laws requested for a Gaussian parameter set");
}

std::vector<StNParams>& MultiLevelParams::stn() {
  if (auto* s = std::get_if<StnLoadings>(&alpha_law)) return s->components;
  throw ValidationError("skew-t-normal laws requested for a Gaussian parameter set");
}

Eigen::MatrixXd VariableDesign::block_diagonal() const {
  const Eigen::Index p = stacked.cols();
  Eigen::MatrixXd out =
      Eigen::MatrixXd::Zero(rows(), static_cast<Eigen::Index>(blocks.size()) * p);
  for (std::size_t j = 0; j < blocks.size(); ++j) {
    out.block(offsets[j], static_cast<Eigen::Index>(j) * p, blocks[j].rows(), p) = blocks[j];
  }
  return out;
}

Designs assemble_designs(const Dataset& ds, const SplineBasis& basis) {
  Designs designs;
  designs.reserve(ds.num_variables());
  const Eigen::Index p = basis.dimension();
  for (const auto& panel : ds.variables()) {
    VariableDesign d;
    d.id = panel.id;
    const Eigen::Index n = panel.total_observations();
    d.stacked.resize(n, p);
    d.y.resize(n);
    Eigen::Index row = 0;
    for (const auto& rep : panel.replicates) {
      d.offsets.push_back(row);
      d.blocks.push_back(basis.evaluate(rep.times));
      d.stacked.middleRows(row, rep.size()) = d.blocks.back();
      d.y.segment(row, rep.size()) = rep.values;
      row += rep.size();
    }
    designs.push_back(std::move(d));
  }
  return designs;
}

Eigen::MatrixXd loading_design(const MultiLevelParams& params, std::size_t i,
                               const VariableDesign& design) {
  check_variable(params, i);
  const Eigen::Index k = params.variable_rank();
  const Eigen::Index l = params.replicate_rank(i);
  const auto& theta_beta = params.variables[i].theta_beta;
  Eigen::MatrixXd z =
      Eigen::MatrixXd::Zero(design.rows(), loading_count(params, i, design.replicates()));
  if (k > 0) z.leftCols(k) = design.stacked * params.theta_alpha;
  if (l > 0) {
    for (std::size_t j = 0; j < design.replicates(); ++j) {
      const auto& b = design.blocks[j];
      z.block(design.offsets[j], k + static_cast<Eigen::Index>(j) * l, b.rows(), l) =
          b * theta_beta;
    }
  }
  return z;
}

Eigen::VectorXd gaussian_prior_variances(const MultiLevelParams& params, std::size_t i,
                                         std::size_t replicates) {
  check_variable(params, i);
  const Eigen::Index k = params.variable_rank();
  const Eigen::Index l = params.replicate_rank(i);
  Eigen::VectorXd s2(loading_count(params, i, replicates));
  if (k > 0) s2.head(k) = params.d_alpha();
  for (std::size_t j = 0; j < replicates; ++j) {
    s2.segment(k + static_cast<Eigen::Index>(j) * l, l) = params.variables[i].d_beta;
  }
  return s2;
}

LowRankGaussian::LowRankGaussian(const Eigen::MatrixXd& z,
                                 const Eigen::VectorXd& prior_variances, double sigma2)
    : sigma2_(sigma2) {
  if (!(sigma2 > 0.0)) throw NumericalError("noise variance must be positive");
  if ((prior_variances.array() < 0.0).any()) {
    throw NumericalError("negative prior variance in loading conditional");
  }
  z_ = z;
  scale_ = prior_variances.cwiseSqrt();
  w_ = z * scale_.asDiagonal();
  Eigen::MatrixXd a = w_.transpose() * w_;
  a.diagonal().array() += sigma2;
  chol_.compute(a);
  if (chol_.info() != Eigen::Success) {
    throw NumericalError("loading conditional covariance is not positive definite");
  }
}

Eigen::VectorXd LowRankGaussian::posterior_mean(const Eigen::VectorXd& r,
                                                const Eigen::VectorXd& m0) const {
  const Eigen::VectorXd zm0 = z_ * m0;
  const Eigen::VectorXd u = chol_.solve(w_.transpose() * (r - zm0));
  return m0 + scale_.cwiseProduct(u);
}

Eigen::MatrixXd LowRankGaussian::posterior_covariance() const {
  const Eigen::Index q = scale_.size();
  Eigen::MatrixXd ainv = chol_.solve(Eigen::MatrixXd::Identity(q, q));
  Eigen::MatrixXd cov = sigma2_ * scale_.asDiagonal() * ainv * scale_.asDiagonal();
  return 0.5 * (cov + cov.transpose());
}

Eigen::VectorXd LowRankGaussian::sample(const Eigen::VectorXd& mean, Rng& rng) const {
  std::normal_distribution<double> normal;
  Eigen::VectorXd e(scale_.size());
  for (Eigen::Index c = 0; c < e.size(); ++c) e(c) = normal(rng);
  const Eigen::VectorXd u = chol_.matrixU().solve(e);
  return mean + std::sqrt(sigma2_) * scale_.cwiseProduct(u);
}

double LowRankGaussian::log_det_marginal() const {
  const auto n = static_cast<double>(w_.rows());
  const auto q = static_cast<double>(w_.cols());
  const Eigen::VectorXd d = chol_.matrixLLT().diagonal();
  return (n - q) * std::log(sigma2_) + 2.0 * d.array().log().sum();
}

double LowRankGaussian::quadratic_form(const Eigen::VectorXd& r) const {
  const Eigen::VectorXd wr = w_.transpose() * r;
  return (r.squaredNorm() - wr.dot(chol_.solve(wr))) / sigma2_;
}

double LowRankGaussian::trace_marginal_inverse() const {
  const Eigen::Index q = scale_.size();
  const double tr_ainv = chol_.solve(Eigen::MatrixXd::Identity(q, q)).trace();
  return (static_cast<double>(w_.rows() - q)) / sigma2_ + tr_ainv;
}

Eigen::MatrixXd marginal_covariance(const MultiLevelParams& params, std::size_t i,
                                    const VariableDesign& design) {
  check_variable(params, i);
  if (!params.is_gaussian()) {
    throw ValidationError(
        "marginal covariance is only available for Gaussian variable-level loadings");
  }
  const Eigen::MatrixXd z = loading_design(params, i, design);
  const Eigen::VectorXd s2 = gaussian_prior_variances(params, i, design.replicates());
  Eigen::MatrixXd v = z * s2.asDiagonal() * z.transpose();
  v.diagonal().array() += params.variables[i].sigma2;
  return 0.5 * (v + v.transpose());
}

double gaussian_marginal_loglik(const MultiLevelParams& params, const Designs& designs) {
  double total = 0.0;
  for (std::size_t i = 0; i < designs.size(); ++i) {
    const auto& d = designs[i];
    try {
      const LowRankGaussian g(loading_design(params, i, d),
                              gaussian_prior_variances(params, i, d.replicates()),
                              params.variables.at(i).sigma2);
      const Eigen::VectorXd r = d.y - d.stacked * params.theta_mu;
      total += -0.5 * (static_cast<double>(d.rows()) * kLog2Pi + g.log_det_marginal() +
                       g.quadratic_form(r));
    } catch (const NumericalError& e) {
      throw NumericalError("variable '" + d.id + "': " + e.what());
    }
  }
  return total;
}

double gaussian_marginal_loglik_dense(const MultiLevelParams& params, const Designs& designs) {
  double total = 0.0;
  for (std::size_t i = 0; i < designs.size(); ++i) {
    const auto& d = designs[i];
    const Eigen::MatrixXd v = marginal_covariance(params, i, d);
    const Eigen::LLT<Eigen::MatrixXd> llt(v);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("variable '" + d.id +
                           "': marginal covariance is not positive definite");
    }
    const Eigen::VectorXd r = d.y - d.stacked * params.theta_mu;
    const Eigen::VectorXd half = llt.matrixL().solve(r);
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    total += -0.5 * (static_cast<double>(d.rows()) * kLog2Pi + logdet + half.squaredNorm());
  }
  return total;
}

VariableMoments gaussian_posterior(const MultiLevelParams& params, std::size_t i,
                                   const VariableDesign& design) {
  const double sigma2 = params.variables.at(i).sigma2;
  const Eigen::MatrixXd z = loading_design(params, i, design);
  const Eigen::VectorXd s2 = gaussian_prior_variances(params, i, design.replicates());
  try {
    const LowRankGaussian g(z, s2, sigma2);
    const Eigen::VectorXd r = design.y - design.stacked * params.theta_mu;
    VariableMoments m;
    m.mean = g.posterior_mean(r, Eigen::VectorXd::Zero(s2.size()));
    m.second = g.posterior_covariance() + m.mean * m.mean.transpose();
    const Eigen::VectorXd eps = r - z * m.mean;
    m.residual_sq = eps.squaredNorm() + static_cast<double>(design.rows()) * sigma2 -
                    sigma2 * sigma2 * g.trace_marginal_inverse();
    m.residual_sq = std::max(m.residual_sq, 0.0);
    return m;
  } catch (const NumericalError& e) {
    throw NumericalError("variable '" + design.id + "': " + e.what());
  }
}

VariableMoments gaussian_posterior_dense(const MultiLevelParams& params, std::size_t i,
                                         const VariableDesign& design) {
  const double sigma2 = params.variables.at(i).sigma2;
  const Eigen::MatrixXd z = loading_design(params, i, design);
  const Eigen::VectorXd s2 = gaussian_prior_variances(params, i, design.replicates());
  const Eigen::MatrixXd v = marginal_covariance(params, i, design);
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(v);
  if (ldlt.info() != Eigen::Success) {
    throw NumericalError("variable '" + design.id + "': singular marginal covariance");
  }
  const Eigen::VectorXd r = design.y - design.stacked * params.theta_mu;
  const Eigen::MatrixXd pz = s2.asDiagonal() * z.transpose();  // P Z^T
  VariableMoments m;
  m.mean = pz * ldlt.solve(r);
  Eigen::MatrixXd cov = Eigen::MatrixXd(s2.asDiagonal()) - pz * ldlt.solve(pz.transpose());
  cov = 0.5 * (cov + cov.transpose());
  m.second = cov + m.mean * m.mean.transpose();
  const Eigen::VectorXd eps = r - z * m.mean;
  const double tr_vinv =
      ldlt.solve(Eigen::MatrixXd::Identity(design.rows(), design.rows())).trace();
  m.residual_sq = eps.squaredNorm() + static_cast<double>(design.rows()) * sigma2 -
                  sigma2 * sigma2 * tr_vinv;
  return m;
}

Orthogonalized orthogonalize(const MultiLevelParams& params,
                             const Eigen::VectorXd* alpha_variances) {
  Orthogonalized out{params, {}};
  const Eigen::Index k = params.variable_rank();
  const Eigen::Index p = params.dimension();

  Eigen::VectorXd d_alpha;
  if (alpha_variances != nullptr) {
    d_alpha = *alpha_variances;
  } else if (params.is_gaussian()) {
    d_alpha = params.d_alpha();
  } else {
    d_alpha.resize(k);
    for (Eigen::Index c = 0; c < k; ++c) {
      const auto& law = params.stn()[static_cast<std::size_t>(c)];
      d_alpha(c) = law.nu > 2.0 ? stn_variance(law) : law.sigma2;
    }
  }
  if (d_alpha.size() != k) throw ValidationError("alpha variance vector has wrong length");

  if (k > 0) {
    const Eigen::MatrixXd cov = params.theta_alpha * d_alpha.asDiagonal() *
                                params.theta_alpha.transpose();
    Eigen::MatrixXd u;
    Eigen::VectorXd lambda;
    leading_eigen(cov, std::min(k, p), u, lambda);
    out.rotation.alpha = u.transpose() * params.theta_alpha;
    out.params.theta_alpha = u;
    if (out.params.is_gaussian()) {
      out.params.d_alpha() = lambda;
    } else {
      const auto& old = params.stn();
      auto& laws = out.params.stn();
      for (Eigen::Index c = 0; c < k; ++c) {
        Eigen::Index src = 0;
        out.rotation.alpha.row(c).cwiseAbs().maxCoeff(&src);
        StNParams law = old[static_cast<std::size_t>(src)];
        if (out.rotation.alpha(c, src) < 0.0) {
          law.xi = -law.xi;
          law.lambda = -law.lambda;
        }
        laws[static_cast<std::size_t>(c)] = law;
      }
    }
  } else {
    out.rotation.alpha.resize(0, 0);
  }

  out.rotation.beta.resize(params.variables.size());
  for (std::size_t i = 0; i < params.variables.size(); ++i) {
    const auto& vp = params.variables[i];
    const Eigen::Index l = vp.theta_beta.cols();
    if (l == 0) {
      out.rotation.beta[i].resize(0, 0);
      continue;
    }
    const Eigen::MatrixXd cov =
        vp.theta_beta * vp.d_beta.asDiagonal() * vp.theta_beta.transpose();
    Eigen::MatrixXd u;
    Eigen::VectorXd lambda;
    leading_eigen(cov, std::min(l, p), u, lambda);
    out.rotation.beta[i] = u.transpose() * vp.theta_beta;
    out.params.variables[i].theta_beta = u;
    out.params.variables[i].d_beta = lambda;
  }
  return out;
}

Eigen::VectorXd rotate_loadings(const Eigen::VectorXd& x, const LoadingRotation& rotation,
                                std::size_t i) {
  const Eigen::Index k = rotation.alpha.rows();
  const Eigen::MatrixXd& rb = rotation.beta.at(i);
  const Eigen::Index l = rb.rows();
  Eigen::VectorXd out(x.size());
  if (k > 0) out.head(k) = rotation.alpha * x.head(k);
  const Eigen::Index reps = l > 0 ? (x.size() - k) / l : 0;
  for (Eigen::Index j = 0; j < reps; ++j) {
    out.segment(k + j * l, l) = rb * x.segment(k + j * l, l);
  }
  return out;
}

LoadingMoments rotate_moments(const LoadingMoments& moments, const LoadingRotation& rotation) {
  LoadingMoments out = moments;
  const Eigen::Index k = rotation.alpha.rows();
  for (std::size_t i = 0; i < moments.variables.size(); ++i) {
    const auto& vm = moments.variables[i];
    const Eigen::Index q = vm.mean.size();
    const Eigen::MatrixXd& rb = rotation.beta.at(i);
    const Eigen::Index l = rb.rows();
    Eigen::MatrixXd r = Eigen::MatrixXd::Zero(q, q);
    if (k > 0) r.topLeftCorner(k, k) = rotation.alpha;
    const Eigen::Index reps = l > 0 ? (q - k) / l : 0;
    for (Eigen::Index j = 0; j < reps; ++j) r.block(k + j * l, k + j * l, l, l) = rb;
    out.variables[i].mean = r * vm.mean;
    Eigen::MatrixXd s = r * vm.second * r.transpose();
    out.variables[i].second = 0.5 * (s + s.transpose());
  }
  return out;
}

FittedCurves extract_curves(const MultiLevelParams& params,
                            const std::vector<Eigen::VectorXd>& loadings,
                            const SplineBasis& basis, const Dataset& ds) {
  if (loadings.size() != ds.num_variables() || params.variables.size() != ds.num_variables()) {
    throw ValidationError("loadings, parameters and dataset disagree on the variable count");
  }
  const Eigen::MatrixXd& b = basis.grid_matrix();
  const Eigen::Index k = params.variable_rank();
  FittedCurves out;
  out.grid = basis.grid();
  out.variables.reserve(ds.num_variables());
  for (std::size_t i = 0; i < ds.num_variables(); ++i) {
    const auto& panel = ds.variable(i);
    const Eigen::VectorXd& x = loadings[i];
    const Eigen::Index l = params.replicate_rank(i);
    const auto reps = static_cast<Eigen::Index>(panel.replicates.size());
    if (x.size() != k + reps * l) {
      throw ValidationError("loading vector for variable '" + panel.id +
                            "' has the wrong length");
    }
    VariableCurves vc;
    vc.id = panel.id;
    Eigen::VectorXd coef = params.theta_mu;
    if (k > 0) coef += params.theta_alpha * x.head(k);
    vc.mean = b * coef;
    for (Eigen::Index j = 0; j < reps; ++j) {
      vc.replicate_ids.push_back(panel.replicates[static_cast<std::size_t>(j)].id);
      Eigen::VectorXd rc = coef;
      if (l > 0) rc += params.variables[i].theta_beta * x.segment(k + j * l, l);
      vc.replicates.push_back(b * rc);
    }
    out.variables.push_back(std::move(vc));
  }
  return out;
}

std::vector<Eigen::VectorXd> posterior_means(const LoadingMoments& moments) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(moments.variables.size());
  for (const auto& v : moments.variables) out.push_back(v.mean);
  return out;
}

}  // namespace mlfpca
