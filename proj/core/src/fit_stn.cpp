#include "mlfpca/fit_stn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "mlfpca/error.hpp"
#include "mlfpca/fit_gaussian.hpp"
#include "mlfpca/parallel.hpp"

namespace mlfpca {
namespace {

// Sweep with a precomputed loading design Z_i.
void sweep_with(VariableChain& chain, const MultiLevelParams& params, std::size_t i,
                const VariableDesign& design, const Eigen::MatrixXd& z, Rng& rng) {
  const auto& laws = params.stn();
  const Eigen::Index k = params.variable_rank();
  const Eigen::Index l = params.replicate_rank(i);
  const Eigen::Index q = chain.x.size();
  Eigen::VectorXd m0 = Eigen::VectorXd::Zero(q);
  Eigen::VectorXd s2(q);
  for (Eigen::Index c = 0; c < k; ++c) {
    const StNParams& law = laws[static_cast<std::size_t>(c)];
    const double denom = chain.tau(c) + law.lambda * law.lambda;
    m0(c) = law.xi + std::sqrt(law.sigma2) * law.lambda * chain.gamma(c) / denom;
    s2(c) = law.sigma2 / denom;
  }
  const Eigen::VectorXd& d_beta = params.variables[i].d_beta;
  for (Eigen::Index j = 0; j * l < q - k && l > 0; ++j) s2.segment(k + j * l, l) = d_beta;

  try {
    const LowRankGaussian g(z, s2, params.variables[i].sigma2);
    const Eigen::VectorXd r = design.y - design.stacked * params.theta_mu;
    chain.x = g.sample(g.posterior_mean(r, m0), rng);
  } catch (const NumericalError& e) {
    throw NumericalError("variable '" + design.id + "': " + e.what());
  }
  for (Eigen::Index c = 0; c < k; ++c) {
    const StNParams& law = laws[static_cast<std::size_t>(c)];
    chain.gamma(c) = gamma_given_alpha(chain.x(c), law).sample(rng);
    chain.tau(c) = tau_given_alpha(chain.x(c), law).sample(rng);
  }
}

void fit_component_laws(std::vector<StNParams>& laws,
                        const std::vector<std::vector<double>>& draws,
                        const StnFitOptions& options) {
  for (std::size_t c = 0; c < laws.size(); ++c) {
    laws[c] = fit_stn_mle(draws[c], laws[c], options).params;
  }
}

// Moves each law to mean zero; returns the removed means.
Eigen::VectorXd recentre(std::vector<StNParams>& laws) {
  Eigen::VectorXd m(static_cast<Eigen::Index>(laws.size()));
  for (std::size_t c = 0; c < laws.size(); ++c) {
    m(static_cast<Eigen::Index>(c)) = stn_mean(laws[c]);
    laws[c].xi -= m(static_cast<Eigen::Index>(c));
  }
  return m;
}

std::vector<double> flatten(const MultiLevelParams& p, int block) {
  std::vector<double> out;
  const auto push = [&](const Eigen::MatrixXd& m) {
    out.insert(out.end(), m.data(), m.data() + m.size());
  };
  switch (block) {
    case 0: push(p.theta_mu); break;
    case 1: push(p.theta_alpha); break;
    case 2:
      for (const auto& s : p.stn()) {
        out.push_back(s.xi);
        out.push_back(std::log(s.sigma2));
        out.push_back(s.lambda);
        out.push_back(std::log(s.nu));
      }
      break;
    case 3:
      for (const auto& v : p.variables) push(v.theta_beta);
      break;
    case 4:
      for (const auto& v : p.variables) push(v.d_beta);
      break;
    case 5:
      for (const auto& v : p.variables) out.push_back(v.sigma2);
      break;
    default: break;
  }
  return out;
}

// Largest over parameter blocks of max|new - old| / max|old|.
double relative_change(const MultiLevelParams& before, const MultiLevelParams& after) {
  double worst = 0.0;
  for (int block = 0; block < 6; ++block) {
    const auto a = flatten(before, block);
    const auto b = flatten(after, block);
    double diff = 0.0;
    double scale = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      diff = std::max(diff, std::abs(b[k] - a[k]));
      scale = std::max(scale, std::abs(a[k]));
    }
    if (!a.empty()) worst = std::max(worst, diff / std::max(scale, 1e-12));
  }
  return worst;
}

void append_trace(std::vector<StnTraceRow>& trace, int it, const MultiLevelParams& p,
                  double change) {
  trace.push_back({it, "theta_mu", "norm", p.theta_mu.norm()});
  for (Eigen::Index c = 0; c < p.variable_rank(); ++c) {
    const std::string name = "alpha_" + std::to_string(c + 1);
    trace.push_back({it, "theta_" + name, "norm", p.theta_alpha.col(c).norm()});
    const StNParams& s = p.stn()[static_cast<std::size_t>(c)];
    trace.push_back({it, name, "xi", s.xi});
    trace.push_back({it, name, "sigma2", s.sigma2});
    trace.push_back({it, name, "lambda", s.lambda});
    trace.push_back({it, name, "nu", s.nu});
  }
  double s2 = 0.0;
  double db = 0.0;
  std::size_t nb = 0;
  for (const auto& v : p.variables) {
    s2 += v.sigma2;
    db += v.d_beta.sum();
    nb += static_cast<std::size_t>(v.d_beta.size());
  }
  const auto m = static_cast<double>(std::max<std::size_t>(p.variables.size(), 1));
  trace.push_back({it, "sigma2", "mean", s2 / m});
  if (nb > 0) trace.push_back({it, "d_beta", "mean", db / static_cast<double>(nb)});
  if (std::isfinite(change)) trace.push_back({it, "all", "relative_change", change});
}

}  // namespace

void GibbsConfig::validate() const {
  if (sweeps < 1) throw ValidationError("sweeps must be positive");
  if (burn_in < 0 || burn_in >= sweeps) throw ValidationError("burn-in must lie in [0, sweeps)");
  if (sweeps - burn_in < 10) throw ValidationError("need at least 10 post-burn-in sweeps");
  if (mcem_iterations < 1) throw ValidationError("mcem_iterations must be positive");
  if (convergence_window < 1) throw ValidationError("convergence window must be positive");
  if (!(convergence_rel_change > 0.0)) {
    throw ValidationError("convergence threshold must be positive");
  }
  if (!(ridge_penalty_init >= 0.0)) throw ValidationError("ridge penalty must be nonnegative");
}

void GibbsState::reset_sums() {
  for (std::size_t i = 0; i < chains.size(); ++i) {
    const Eigen::Index q = chains[i].x.size();
    sum_x[i] = Eigen::VectorXd::Zero(q);
    sum_xx[i] = Eigen::MatrixXd::Zero(q, q);
    sum_eps[i] = 0.0;
  }
  accumulated = 0;
}

GibbsState initial_gibbs_state(const MultiLevelParams& params,
                               const std::vector<Eigen::VectorXd>& loadings) {
  const auto& laws = params.stn();
  const Eigen::Index k = params.variable_rank();
  GibbsState state;
  state.chains.resize(loadings.size());
  state.sum_x.resize(loadings.size());
  state.sum_xx.resize(loadings.size());
  state.sum_eps.resize(loadings.size());
  for (std::size_t i = 0; i < loadings.size(); ++i) {
    auto& ch = state.chains[i];
    ch.x = loadings[i];
    ch.tau = Eigen::VectorXd::Ones(k);
    ch.gamma.resize(k);
    for (Eigen::Index c = 0; c < k; ++c) {
      ch.gamma(c) = gamma_given_alpha(ch.x(c), laws[static_cast<std::size_t>(c)]).expectation();
    }
  }
  state.reset_sums();
  return state;
}

void gibbs_sweep(VariableChain& chain, const MultiLevelParams& params, std::size_t i,
                 const VariableDesign& design, Rng& rng) {
  sweep_with(chain, params, i, design, loading_design(params, i, design), rng);
}

McEStep mc_e_step(const MultiLevelParams& params, const Designs& designs,
                  const GibbsConfig& config, GibbsState& state, int iteration) {
  const std::size_t m = designs.size();
  const Eigen::Index k = params.variable_rank();
  if (state.chains.size() != m) throw ValidationError("Gibbs state does not match the data");
  state.reset_sums();
  const int kept = config.sweeps - config.burn_in;
  std::vector<std::vector<std::vector<double>>> draws(
      m, std::vector<std::vector<double>>(static_cast<std::size_t>(k)));

  parallel_for(m, config.threads, [&](std::size_t i) {
    const auto& d = designs[i];
    const Eigen::MatrixXd z = loading_design(params, i, d);
    const Eigen::VectorXd r = d.y - d.stacked * params.theta_mu;
    Rng rng = make_stream(config.seed, {i, static_cast<std::uint64_t>(iteration)});
    auto& ch = state.chains[i];
    for (int s = 0; s < config.sweeps; ++s) {
      sweep_with(ch, params, i, d, z, rng);
      if (s < config.burn_in) continue;
      state.sum_x[i] += ch.x;
      state.sum_xx[i].noalias() += ch.x * ch.x.transpose();
      state.sum_eps[i] += (r - z * ch.x).squaredNorm();
      for (Eigen::Index c = 0; c < k; ++c) {
        draws[i][static_cast<std::size_t>(c)].push_back(ch.x(c));
      }
    }
  });
  state.accumulated = kept;

  McEStep out;
  out.moments.variables.resize(m);
  out.alpha_draws.assign(static_cast<std::size_t>(k), {});
  for (std::size_t i = 0; i < m; ++i) {
    auto& vm = out.moments.variables[i];
    vm.mean = state.sum_x[i] / kept;
    const Eigen::MatrixXd s = state.sum_xx[i] / kept;
    vm.second = 0.5 * (s + s.transpose());
    vm.residual_sq = state.sum_eps[i] / kept;
    for (Eigen::Index c = 0; c < k; ++c) {
      auto& dst = out.alpha_draws[static_cast<std::size_t>(c)];
      const auto& src = draws[i][static_cast<std::size_t>(c)];
      dst.insert(dst.end(), src.begin(), src.end());
    }
  }
  return out;
}

void shift_alpha_moments(LoadingMoments& moments, const Eigen::VectorXd& shift) {
  const Eigen::Index k = shift.size();
  for (auto& vm : moments.variables) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(vm.mean.size());
    s.head(k) = shift;
    vm.second += -s * vm.mean.transpose() - vm.mean * s.transpose() + s * s.transpose();
    vm.mean -= s;
  }
}

MultiLevelParams m_step_stn(LoadingMoments& moments,
                            const std::vector<std::vector<double>>& alpha_draws,
                            const Designs& designs, const MultiLevelParams& current,
                            const StnFitOptions& options) {
  MultiLevelParams next = current;
  auto& laws = next.stn();
  if (alpha_draws.size() != laws.size()) {
    throw ValidationError("need one set of draws per variable-level component");
  }
  fit_component_laws(laws, alpha_draws, options);
  const Eigen::VectorXd shift = recentre(laws);
  if (shift.size() > 0) next.theta_mu += next.theta_alpha * shift;
  shift_alpha_moments(moments, shift);
  return m_step_gaussian(moments, designs, next);
}

StnFit fit_multilevel_stn(const Dataset& ds, const SplineBasis& basis, int variable_rank,
                          const std::vector<int>& replicate_ranks, const GibbsConfig& config) {
  config.validate();
  const Designs designs = assemble_designs(ds, basis);
  const Initialization init = initialize(ds, basis, designs, variable_rank, replicate_ranks,
                                         config.ridge_penalty_init);
  const Eigen::Index k = variable_rank;

  StnFit fit;
  MultiLevelParams params = init.params;
  std::vector<StNParams> laws(static_cast<std::size_t>(k));
  std::vector<Eigen::VectorXd> loadings = init.loadings;
  for (Eigen::Index c = 0; c < k; ++c) {
    const Eigen::VectorXd col = init.alpha_scores.col(c);
    const double var = std::max(col.squaredNorm() / static_cast<double>(col.size()), 1e-8);
    StNParams start{0.0, var, 0.0, 10.0};
    if (config.initial_law) {
      start.lambda = config.initial_law->lambda;
      start.nu = config.initial_law->nu;
    }
    if (col.size() >= 50) {
      start = fit_stn_mle(std::vector<double>(col.data(), col.data() + col.size()), start,
                          config.stn_fit)
                  .params;
    }
    laws[static_cast<std::size_t>(c)] = start;
  }
  params.alpha_law = StnLoadings{laws};
  {
    const Eigen::VectorXd shift = recentre(params.stn());
    if (k > 0) params.theta_mu += params.theta_alpha * shift;
    for (auto& x : loadings) x.head(k) -= shift;
  }

  GibbsState state = initial_gibbs_state(params, loadings);
  const GibbsState initial_state = state;
  std::vector<std::vector<double>> last_draws;
  append_trace(fit.trace, 0, params, std::numeric_limits<double>::quiet_NaN());
  for (int it = 1; it <= config.mcem_iterations; ++it) {
    if (!config.warm_start) state = initial_state;
    McEStep e = mc_e_step(params, designs, config, state, it);
    MultiLevelParams next = m_step_stn(e.moments, e.alpha_draws, designs, params, config.stn_fit);
    const double change = relative_change(params, next);
    params = std::move(next);
    fit.moments = std::move(e.moments);
    last_draws = std::move(e.alpha_draws);
    fit.relative_changes.push_back(change);
    fit.iterations = it;
    append_trace(fit.trace, it, params, change);
    const auto w = static_cast<std::size_t>(config.convergence_window);
    if (fit.relative_changes.size() >= w) {
      double mean = 0.0;
      for (std::size_t s = fit.relative_changes.size() - w; s < fit.relative_changes.size(); ++s) {
        mean += fit.relative_changes[s];
      }
      if (mean / static_cast<double>(w) < config.convergence_rel_change) {
        fit.converged = true;
        break;
      }
    }
  }

  // Orthogonalize using the loading second moments, then refit each law to
  // the rotated draws and recentre again.
  if (k > 0) {
    Eigen::VectorXd second = Eigen::VectorXd::Zero(k);
    for (const auto& vm : fit.moments.variables) second += vm.second.diagonal().head(k);
    second /= static_cast<double>(fit.moments.variables.size());
    const Orthogonalized orth = orthogonalize(params, &second);
    params = orth.params;
    fit.moments = rotate_moments(fit.moments, orth.rotation);
    const std::size_t nd = last_draws.empty() ? 0 : last_draws.front().size();
    std::vector<std::vector<double>> rotated(static_cast<std::size_t>(k),
                                             std::vector<double>(nd));
    Eigen::VectorXd a(k);
    for (std::size_t s = 0; s < nd; ++s) {
      for (Eigen::Index c = 0; c < k; ++c) a(c) = last_draws[static_cast<std::size_t>(c)][s];
      const Eigen::VectorXd b = orth.rotation.alpha * a;
      for (Eigen::Index c = 0; c < k; ++c) rotated[static_cast<std::size_t>(c)][s] = b(c);
    }
    if (nd >= 50) fit_component_laws(params.stn(), rotated, config.stn_fit);
    const Eigen::VectorXd shift = recentre(params.stn());
    params.theta_mu += params.theta_alpha * shift;
    shift_alpha_moments(fit.moments, shift);
  } else {
    const Orthogonalized orth = orthogonalize(params);
    params = orth.params;
    fit.moments = rotate_moments(fit.moments, orth.rotation);
  }
  fit.params = std::move(params);
  return fit;
}

void write_stn_trace(const std::vector<StnTraceRow>& trace, std::ostream& out) {
  out.precision(17);
  out << "iteration,block,summary_statistic,value\n";
  for (const auto& r : trace) {
    out << r.iteration << ',' << r.block << ',' << r.statistic << ',' << r.value << '\n';
  }
}

void write_stn_trace(const std::vector<StnTraceRow>& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write trace file " + path.string());
  write_stn_trace(trace, out);
}

}  // namespace mlfpca
