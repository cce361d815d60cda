#include "mlfpca/fit_gaussian.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "mlfpca/error.hpp"
#include "mlfpca/parallel.hpp"

namespace mlfpca {
namespace {

struct Pca {
  Eigen::MatrixXd vectors;  // p x count
  Eigen::VectorXd values;   // count
  Eigen::MatrixXd scores;   // rows x count
  Eigen::RowVectorXd centre;
};

// PCA of the rows of c (centred, covariance divided by the row count).
// Columns follow the same sign convention as orthogonalize().
Pca pca(const Eigen::MatrixXd& c, Eigen::Index count) {
  Pca out;
  out.centre = c.colwise().mean();
  const Eigen::MatrixXd centred = c.rowwise() - out.centre;
  const Eigen::MatrixXd cov =
      centred.transpose() * centred / static_cast<double>(std::max<Eigen::Index>(c.rows(), 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::Index p = c.cols();
  out.vectors.resize(p, count);
  out.values.resize(count);
  for (Eigen::Index k = 0; k < count; ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(p - 1 - k);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.vectors.col(k) = v;
    out.values(k) = std::max(0.0, eig.eigenvalues()(p - 1 - k));
  }
  out.scores = centred * out.vectors;
  return out;
}

Eigen::VectorXd ridge_solve(const Eigen::MatrixXd& b, const Eigen::VectorXd& r, double ridge) {
  if (ridge > 0.0) {
    Eigen::MatrixXd a = b.transpose() * b;
    a.diagonal().array() += ridge;
    return a.ldlt().solve(b.transpose() * r);
  }
  return b.completeOrthogonalDecomposition().solve(r);
}

// Keeps initial variance components away from exact zero, which EM can never leave.
Eigen::VectorXd floor_variances(Eigen::VectorXd v) {
  const double scale = v.size() > 0 ? std::max(v.maxCoeff(), 1e-8) : 1.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = std::max(v(k), 1e-6 * scale);
  return v;
}

Eigen::VectorXd solve_normal(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                             const std::string& what) {
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  const double scale = a.diagonal().cwiseAbs().maxCoeff();
  const Eigen::VectorXd d = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || !(scale > 0.0) ||
      d.minCoeff() <= 1e-13 * scale) {
    throw NumericalError("singular normal equations in the " + what + " update");
  }
  return ldlt.solve(b);
}

}  // namespace

void EMConfig::validate() const {
  if (max_iterations < 1) throw ValidationError("max_iterations must be positive");
  if (!(loglik_rel_tolerance > 0.0)) throw ValidationError("tolerance must be positive");
  if (!(ridge_penalty_init >= 0.0)) throw ValidationError("ridge penalty must be nonnegative");
}

std::vector<int> expand_ranks(const std::vector<int>& ranks, std::size_t variables,
                              Eigen::Index dimension) {
  std::vector<int> out;
  if (ranks.size() == 1) {
    out.assign(variables, ranks.front());
  } else if (ranks.size() == variables) {
    out = ranks;
  } else {
    throw ValidationError("replicate ranks must have one entry or one per variable");
  }
  for (const int l : out) {
    if (l < 0 || l > dimension) {
      throw ValidationError("replicate rank " + std::to_string(l) + " outside [0, " +
                            std::to_string(dimension) + "]");
    }
  }
  return out;
}

Initialization initialize(const Dataset& ds, const SplineBasis& basis, const Designs& designs,
                          int variable_rank, const std::vector<int>& replicate_ranks,
                          double ridge) {
  const Eigen::Index p = basis.dimension();
  const std::size_t m = ds.num_variables();
  if (variable_rank < 0 || variable_rank > p) {
    throw ValidationError("variable rank " + std::to_string(variable_rank) + " outside [0, " +
                          std::to_string(p) + "]");
  }
  if (!(ridge >= 0.0)) throw ValidationError("ridge penalty must be nonnegative");
  const std::vector<int> ranks = expand_ranks(replicate_ranks, m, p);
  const Eigen::Index k = variable_rank;

  Initialization init;
  auto& params = init.params;

  Eigen::MatrixXd btb = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd bty = Eigen::VectorXd::Zero(p);
  for (const auto& d : designs) {
    btb += d.stacked.transpose() * d.stacked;
    bty += d.stacked.transpose() * d.y;
  }
  const Eigen::LDLT<Eigen::MatrixXd> grand(btb);
  if (grand.info() != Eigen::Success ||
      grand.vectorD().minCoeff() <= 1e-12 * btb.diagonal().maxCoeff()) {
    throw ValidationError(
        "grand-mean spline fit is rank deficient; use a basis with fewer knots");
  }
  params.theta_mu = grand.solve(bty);

  Eigen::MatrixXd coef(static_cast<Eigen::Index>(m), p);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& d = designs[i];
    coef.row(static_cast<Eigen::Index>(i)) =
        ridge_solve(d.stacked, d.y - d.stacked * params.theta_mu, ridge).transpose();
  }
  const Pca var_pca = pca(coef, k);
  params.theta_alpha = var_pca.vectors;
  params.alpha_law = GaussianLoadings{floor_variances(var_pca.values)};
  init.alpha_scores = var_pca.scores;

  params.variables.resize(m);
  init.loadings.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& d = designs[i];
    const Eigen::VectorXd var_coef = params.theta_mu + coef.row(static_cast<Eigen::Index>(i)).transpose();
    const auto n = static_cast<Eigen::Index>(d.replicates());
    Eigen::MatrixXd rep_coef(n, p);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& b = d.blocks[static_cast<std::size_t>(j)];
      const Eigen::VectorXd r =
          d.y.segment(d.offsets[static_cast<std::size_t>(j)], b.rows()) - b * var_coef;
      rep_coef.row(j) = ridge_solve(b, r, ridge).transpose();
    }
    const Eigen::Index l = ranks[i];
    const Pca rep_pca = pca(rep_coef, l);
    auto& vp = params.variables[i];
    vp.theta_beta = rep_pca.vectors;
    vp.d_beta = floor_variances(rep_pca.values);

    double ss = 0.0;
    Eigen::VectorXd x(k + n * l);
    if (k > 0) x.head(k) = var_pca.scores.row(static_cast<Eigen::Index>(i)).transpose();
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& b = d.blocks[static_cast<std::size_t>(j)];
      Eigen::VectorXd c = var_coef + rep_pca.centre.transpose();
      if (l > 0) {
        x.segment(k + j * l, l) = rep_pca.scores.row(j).transpose();
        c += vp.theta_beta * rep_pca.scores.row(j).transpose();
      }
      ss += (d.y.segment(d.offsets[static_cast<std::size_t>(j)], b.rows()) - b * c)
                .squaredNorm();
    }
    vp.sigma2 = std::max(ss / static_cast<double>(std::max<Eigen::Index>(d.rows(), 1)),
                         kSigma2Floor);
    init.loadings[i] = std::move(x);
  }
  return init;
}

LoadingMoments e_step_gaussian(const MultiLevelParams& params, const Designs& designs,
                               int threads) {
  LoadingMoments out;
  out.variables.resize(designs.size());
  parallel_for(designs.size(), threads, [&](std::size_t i) {
    out.variables[i] = gaussian_posterior(params, i, designs[i]);
  });
  return out;
}

MultiLevelParams m_step_gaussian(const LoadingMoments& moments, const Designs& designs,
                                 const MultiLevelParams& current) {
  MultiLevelParams next = current;
  const std::size_t m = designs.size();
  const Eigen::Index k = current.variable_rank();
  const Eigen::Index p = current.dimension();
  if (moments.variables.size() != m) {
    throw ValidationError("moments and designs disagree on the variable count");
  }

  if (next.is_gaussian() && k > 0) {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(k);
    for (const auto& vm : moments.variables) d += vm.second.diagonal().head(k);
    next.d_alpha() = d / static_cast<double>(m);
  }
  for (std::size_t i = 0; i < m; ++i) {
    auto& vp = next.variables[i];
    const Eigen::Index l = vp.theta_beta.cols();
    const auto n = static_cast<Eigen::Index>(designs[i].replicates());
    const auto& s = moments.variables[i].second;
    Eigen::VectorXd d = Eigen::VectorXd::Zero(l);
    for (Eigen::Index j = 0; j < n; ++j) d += s.diagonal().segment(k + j * l, l);
    if (l > 0) vp.d_beta = d / static_cast<double>(n);
    vp.sigma2 = std::max(moments.variables[i].residual_sq /
                             static_cast<double>(std::max<Eigen::Index>(designs[i].rows(), 1)),
                         kSigma2Floor);
  }

  // theta_mu given the loading matrices.
  {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    for (std::size_t i = 0; i < m; ++i) {
      const auto& d = designs[i];
      const double w = 1.0 / next.variables[i].sigma2;
      const Eigen::MatrixXd z = loading_design(next, i, d);
      a += w * d.stacked.transpose() * d.stacked;
      b += w * d.stacked.transpose() * (d.y - z * moments.variables[i].mean);
    }
    next.theta_mu = solve_normal(a, b, "theta_mu");
  }

  // Columns of Theta_alpha, each given the latest values of the others.
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    double info = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto& d = designs[i];
      const auto& vm = moments.variables[i];
      const double w = 1.0 / next.variables[i].sigma2;
      const Eigen::Index l = next.replicate_rank(i);
      const Eigen::MatrixXd btb = d.stacked.transpose() * d.stacked;
      a += w * vm.second(c, c) * btb;
      info += vm.second(c, c);
      // Expected (y_i - B theta_mu - other terms) * alpha_ic.
      Eigen::VectorXd target = vm.mean(c) * (d.y - d.stacked * next.theta_mu);
      for (Eigen::Index o = 0; o < k; ++o) {
        if (o != c) target -= d.stacked * next.theta_alpha.col(o) * vm.second(o, c);
      }
      if (l > 0) {
        const auto& tb = next.variables[i].theta_beta;
        for (std::size_t j = 0; j < d.replicates(); ++j) {
          const Eigen::Index col = k + static_cast<Eigen::Index>(j) * l;
          const auto& blk = d.blocks[j];
          target.segment(d.offsets[j], blk.rows()) -=
              blk * (tb * vm.second.block(col, c, l, 1));
        }
      }
      b += w * d.stacked.transpose() * target;
    }
    if (info > 0.0) next.theta_alpha.col(c) = solve_normal(a, b, "Theta_alpha column");
  }

  // Columns of each Theta_beta_i.
  for (std::size_t i = 0; i < m; ++i) {
    const auto& d = designs[i];
    const auto& vm = moments.variables[i];
    auto& tb = next.variables[i].theta_beta;
    const Eigen::Index l = tb.cols();
    for (Eigen::Index c = 0; c < l; ++c) {
      Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
      Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
      double info = 0.0;
      for (std::size_t j = 0; j < d.replicates(); ++j) {
        const Eigen::Index base = k + static_cast<Eigen::Index>(j) * l;
        const Eigen::Index me = base + c;
        const auto& blk = d.blocks[j];
        const double s_cc = vm.second(me, me);
        a += s_cc * blk.transpose() * blk;
        info += s_cc;
        Eigen::VectorXd target =
            vm.mean(me) * (d.y.segment(d.offsets[j], blk.rows()) - blk * next.theta_mu);
        if (k > 0) target -= blk * (next.theta_alpha * vm.second.block(0, me, k, 1));
        for (Eigen::Index o = 0; o < l; ++o) {
          if (o != c) target -= blk * tb.col(o) * vm.second(base + o, me);
        }
        b += blk.transpose() * target;
      }
      if (info > 0.0) {
        tb.col(c) = solve_normal(a, b, "Theta_beta column of variable '" + d.id + "'");
      }
    }
  }
  return next;
}

GaussianFit fit_multilevel_gaussian_from(const MultiLevelParams& start, const Designs& designs,
                                         const EMConfig& config) {
  config.validate();
  if (!start.is_gaussian()) {
    throw ValidationError("Gaussian EM requires a Gaussian variable-level law");
  }
  GaussianFit fit;
  fit.params = start;
  double ll = gaussian_marginal_loglik(fit.params, designs);
  fit.trace.push_back({0, ll, std::numeric_limits<double>::quiet_NaN()});
  for (int it = 1; it <= config.max_iterations; ++it) {
    const LoadingMoments moments = e_step_gaussian(fit.params, designs, config.threads);
    fit.params = m_step_gaussian(moments, designs, fit.params);
    if (config.orthogonalize_each_iteration) fit.params = orthogonalize(fit.params).params;
    const double next = gaussian_marginal_loglik(fit.params, designs);
    const double delta = next - ll;
    fit.trace.push_back({it, next, delta});
    fit.iterations = it;
    ll = next;
    if (!std::isfinite(next)) throw NumericalError("log-likelihood became non-finite");
    if (std::abs(delta) < config.loglik_rel_tolerance * std::max(1.0, std::abs(next))) {
      fit.converged = true;
      break;
    }
  }
  fit.params = orthogonalize(fit.params).params;
  fit.moments = e_step_gaussian(fit.params, designs, config.threads);
  fit.log_likelihood = gaussian_marginal_loglik(fit.params, designs);
  return fit;
}

GaussianFit fit_multilevel_gaussian(const Dataset& ds, const SplineBasis& basis,
                                    int variable_rank, const std::vector<int>& replicate_ranks,
                                    const EMConfig& config) {
  config.validate();
  const Designs designs = assemble_designs(ds, basis);
  const Initialization init = initialize(ds, basis, designs, variable_rank, replicate_ranks,
                                         config.ridge_penalty_init);
  return fit_multilevel_gaussian_from(init.params, designs, config);
}

SingleLevelFit fit_singlelevel_gaussian(const Dataset& ds, const SplineBasis& basis,
                                        const std::vector<int>& replicate_ranks,
                                        const EMConfig& config) {
  const std::vector<int> ranks =
      expand_ranks(replicate_ranks, ds.num_variables(), basis.dimension());
  SingleLevelFit out;
  out.variables.resize(ds.num_variables());
  EMConfig inner = config;
  inner.threads = 1;
  parallel_for(ds.num_variables(), config.threads, [&](std::size_t i) {
    out.variables[i] = fit_multilevel_gaussian(ds.subset(i), basis, 0, {ranks[i]}, inner);
  });
  return out;
}

FittedCurves single_level_curves(const SingleLevelFit& fit, const SplineBasis& basis,
                                 const Dataset& ds) {
  if (fit.variables.size() != ds.num_variables()) {
    throw ValidationError("single-level fit and dataset disagree on the variable count");
  }
  FittedCurves out;
  out.grid = basis.grid();
  for (std::size_t i = 0; i < ds.num_variables(); ++i) {
    const auto& f = fit.variables[i];
    FittedCurves one = extract_curves(f.params, posterior_means(f.moments), basis, ds.subset(i));
    out.variables.push_back(std::move(one.variables.front()));
  }
  return out;
}

void write_em_trace(const std::vector<EMTraceRow>& trace, std::ostream& out) {
  out.precision(17);
  out << "iteration,loglik,delta\n";
  for (const auto& row : trace) {
    out << row.iteration << ',' << row.loglik << ',';
    if (std::isfinite(row.delta)) out << row.delta;
    out << '\n';
  }
}

void write_em_trace(const std::vector<EMTraceRow>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write trace file " + path.string());
  write_em_trace(trace, out);
}

}  // namespace mlfpca
