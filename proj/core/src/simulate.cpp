#include "mlfpca/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <string>

#include "csv.hpp"
#include "mlfpca/error.hpp"
#include "mlfpca/fit_gaussian.hpp"
#include "mlfpca/parallel.hpp"
#include "mlfpca/random.hpp"

namespace mlfpca {
namespace {

std::string padded_id(char prefix, std::size_t index, std::size_t count) {
  const std::size_t width = std::to_string(std::max<std::size_t>(count, 1)).size();
  std::string digits = std::to_string(index + 1);
  return std::string(1, prefix) + std::string(width - std::min(width, digits.size()), '0') +
         digits;
}

Eigen::VectorXd raw_shape(const double (&coef)[5]) {
  return Eigen::Map<const Eigen::VectorXd>(coef, 5);
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (const double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

void SimDesign::validate() const {
  if (variables < 1) throw ValidationError("simulation needs at least one variable");
  if (replicates < 2) throw ValidationError("simulation needs at least two replicates");
  if (times.size() < 2) throw ValidationError("simulation needs at least two time points");
  if (d_alpha.size() != 2) throw ValidationError("simulation uses two variable-level components");
  if ((d_alpha.array() < 0.0).any() || d_beta < 0.0 || sigma2 < 0.0) {
    throw ValidationError("simulation variances must be nonnegative");
  }
  if (alpha_stn) {
    if (alpha_stn->size() != 2) throw ValidationError("need one skew-t-normal law per component");
    for (const auto& p : *alpha_stn) {
      mlfpca::validate(p);
      if (p.nu <= 1.0) throw ValidationError("skew-t-normal loadings need nu > 1 for a mean");
    }
  }
}

SimDesign default_preset() { return SimDesign{}; }

SimDesign preset(const std::string& name) {
  if (name == "paper-3.1" || name == "default") return default_preset();
  throw ValidationError("unknown simulation preset '" + name + "'");
}

SplineBasis simulation_basis(const SimDesign& design) {
  return SplineBasis::build(BasisKind::bspline_cubic, design.times, std::nullopt,
                            design.grid_size);
}

MultiLevelParams simulation_truth(const SimDesign& design, const SplineBasis& basis) {
  if (basis.dimension() != 5) throw ValidationError("simulation basis must have dimension 5");
  MultiLevelParams p;
  p.theta_mu = basis.from_raw_coefficients(raw_shape(sim_shapes::kGrandMean));
  Eigen::MatrixXd theta(5, 2);
  theta.col(0) = basis.from_raw_coefficients(raw_shape(sim_shapes::kVariablePc1));
  theta.col(1) = basis.from_raw_coefficients(raw_shape(sim_shapes::kVariablePc2));
  theta.col(0).normalize();
  theta.col(1) -= theta.col(0).dot(theta.col(1)) * theta.col(0);
  theta.col(1).normalize();
  p.theta_alpha = theta;
  p.alpha_law = GaussianLoadings{design.d_alpha};
  Eigen::MatrixXd beta = basis.from_raw_coefficients(raw_shape(sim_shapes::kReplicatePc));
  beta.col(0).normalize();
  VariableParams vp;
  vp.theta_beta = beta;
  vp.d_beta = Eigen::VectorXd::Constant(1, design.d_beta);
  vp.sigma2 = design.sigma2;
  p.variables.assign(design.variables, vp);
  return p;
}

SimulatedData generate(const SimDesign& design) {
  design.validate();
  SplineBasis basis = simulation_basis(design);
  MultiLevelParams truth = simulation_truth(design, basis);
  Eigen::VectorXd times(static_cast<Eigen::Index>(design.times.size()));
  for (std::size_t t = 0; t < design.times.size(); ++t) {
    times(static_cast<Eigen::Index>(t)) = design.times[t];
  }
  const Eigen::MatrixXd b = basis.evaluate(times);

  Eigen::Vector2d stn_shift = Eigen::Vector2d::Zero();
  if (design.alpha_stn) {
    for (int c = 0; c < 2; ++c) stn_shift(c) = stn_mean((*design.alpha_stn)[static_cast<std::size_t>(c)]);
  }

  std::vector<Observation> obs;
  obs.reserve(design.variables * design.replicates * design.times.size());
  std::vector<Eigen::VectorXd> loadings(design.variables);
  const auto reps = static_cast<Eigen::Index>(design.replicates);
  for (std::size_t i = 0; i < design.variables; ++i) {
    Rng rng = make_stream(design.seed, {i});
    std::normal_distribution<double> normal;
    Eigen::VectorXd x(2 + reps);
    for (int c = 0; c < 2; ++c) {
      if (design.alpha_stn) {
        x(c) = sample_hierarchical((*design.alpha_stn)[static_cast<std::size_t>(c)], rng).z -
               stn_shift(c);
      } else {
        x(c) = std::sqrt(design.d_alpha(c)) * normal(rng);
      }
    }
    const Eigen::VectorXd var_coef = truth.theta_mu + truth.theta_alpha * x.head(2);
    const std::string vid = padded_id('v', i, design.variables);
    for (Eigen::Index j = 0; j < reps; ++j) {
      x(2 + j) = std::sqrt(design.d_beta) * normal(rng);
      const Eigen::VectorXd coef = var_coef + truth.variables[i].theta_beta.col(0) * x(2 + j);
      const Eigen::VectorXd mean = b * coef;
      const std::string rid = padded_id('r', static_cast<std::size_t>(j), design.replicates);
      for (Eigen::Index t = 0; t < times.size(); ++t) {
        obs.push_back({vid, rid, times(t), mean(t) + std::sqrt(design.sigma2) * normal(rng)});
      }
    }
    loadings[i] = std::move(x);
  }
  Dataset ds = Dataset::from_observations(std::move(obs));
  FittedCurves curves = extract_curves(truth, loadings, basis, ds);
  return {std::move(ds), std::move(basis), std::move(truth), std::move(loadings),
          std::move(curves)};
}

MseSummary mse_variable_curves(const FittedCurves& fitted, const FittedCurves& truth) {
  if (fitted.grid.size() != truth.grid.size() ||
      (fitted.grid - truth.grid).cwiseAbs().maxCoeff() > 1e-9) {
    throw ValidationError("fitted and true curves are on different grids");
  }
  std::map<std::string, const VariableCurves*> by_id;
  for (const auto& v : truth.variables) by_id[v.id] = &v;
  MseSummary out;
  for (const auto& v : fitted.variables) {
    const auto it = by_id.find(v.id);
    if (it == by_id.end()) throw ValidationError("no true curve for variable '" + v.id + "'");
    out.per_variable.push_back((v.mean - it->second->mean).squaredNorm() /
                               static_cast<double>(v.mean.size()));
  }
  if (out.per_variable.size() != truth.variables.size()) {
    throw ValidationError("fitted and true curves cover different variables");
  }
  out.mean = mean_of(out.per_variable);
  out.sd = sd_of(out.per_variable, out.mean);
  return out;
}

std::string to_string(StudyFitter f) {
  return f == StudyFitter::multi_level ? "multi-level" : "single-level";
}

std::vector<StudyRow> run_study(const StudyConfig& config) {
  if (config.repetitions < 1) throw ValidationError("repetitions must be positive");
  EMConfig em;
  em.max_iterations = config.max_iterations;
  em.loglik_rel_tolerance = config.tolerance;
  em.threads = 1;

  std::vector<StudyRow> rows;
  for (const std::size_t m : config.variable_counts) {
    for (const std::size_t n : config.replicate_counts) {
      const auto reps = static_cast<std::size_t>(config.repetitions);
      const std::size_t nf = config.fitters.size();
      // mse[r][f] holds per-variable errors, or is empty on failure.
      std::vector<std::vector<std::vector<double>>> mse(reps,
                                                        std::vector<std::vector<double>>(nf));
      parallel_for(reps, config.threads, [&](std::size_t r) {
        SimDesign design = config.base;
        design.variables = m;
        design.replicates = n;
        design.seed = derive_seed(config.seed, {m, n, r});
        const SimulatedData sim = generate(design);
        for (std::size_t f = 0; f < nf; ++f) {
          try {
            FittedCurves curves;
            if (config.fitters[f] == StudyFitter::multi_level) {
              const GaussianFit fit = fit_multilevel_gaussian(sim.dataset, sim.basis, 2, {1}, em);
              curves = extract_curves(fit.params, posterior_means(fit.moments), sim.basis,
                                      sim.dataset);
            } else {
              const SingleLevelFit fit = fit_singlelevel_gaussian(sim.dataset, sim.basis, {1}, em);
              curves = single_level_curves(fit, sim.basis, sim.dataset);
            }
            mse[r][f] = mse_variable_curves(curves, sim.truth).per_variable;
          } catch (const std::exception&) {
            mse[r][f].clear();
          }
        }
      });
      for (std::size_t f = 0; f < nf; ++f) {
        StudyRow row;
        row.variables = m;
        row.replicates = n;
        row.fitter = config.fitters[f];
        std::vector<double> pooled;
        for (std::size_t r = 0; r < reps; ++r) {
          if (mse[r][f].empty()) {
            ++row.failures;
            continue;
          }
          ++row.repetitions;
          pooled.insert(pooled.end(), mse[r][f].begin(), mse[r][f].end());
        }
        row.mean_mse = mean_of(pooled);
        row.sd_mse = sd_of(pooled, row.mean_mse);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

void write_study_csv(const std::vector<StudyRow>& rows, std::ostream& out) {
  out.precision(10);
  out << "M,n,fitter,mean_mse,sd_mse,repetitions\n";
  for (const auto& r : rows) {
    out << r.variables << ',' << r.replicates << ',' << to_string(r.fitter) << ','
        << r.mean_mse << ',' << r.sd_mse << ',' << r.repetitions << '\n';
  }
}

void write_study_csv(const std::vector<StudyRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write study results to " + path.string());
  write_study_csv(rows, out);
}

void write_curves_csv(const FittedCurves& curves, std::ostream& out) {
  out << "variable,replicate,time,value\n";
  for (const auto& v : curves.variables) {
    for (Eigen::Index g = 0; g < curves.grid.size(); ++g) {
      out << v.id << ",," << csv::format_double(curves.grid(g)) << ','
          << csv::format_double(v.mean(g)) << '\n';
    }
    for (std::size_t j = 0; j < v.replicates.size(); ++j) {
      for (Eigen::Index g = 0; g < curves.grid.size(); ++g) {
        out << v.id << ',' << v.replicate_ids[j] << ',' << csv::format_double(curves.grid(g))
            << ',' << csv::format_double(v.replicates[j](g)) << '\n';
      }
    }
  }
}

void write_curves_csv(const FittedCurves& curves, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write curves to " + path.string());
  write_curves_csv(curves, out);
}

FittedCurves read_curves_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || csv::trim(line) != "variable,replicate,time,value") {
    throw ValidationError("curves file must start with header variable,replicate,time,value");
  }
  struct Series {
    std::vector<double> t, v;
  };
  // variable -> replicate ("" for the mean) -> series, in file order.
  std::vector<std::string> var_order;
  std::map<std::string, std::vector<std::string>> rep_order;
  std::map<std::string, std::map<std::string, Series>> data;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto content = csv::trim(line);
    if (content.empty()) continue;
    const auto f = csv::split_fields(content);
    double t = 0.0;
    double v = 0.0;
    if (f.size() != 4 || !csv::parse_double(f[2], t) || !csv::parse_double(f[3], v)) {
      throw ValidationError("curves file line " + std::to_string(line_no) + ": malformed row");
    }
    const std::string var(csv::unquote(f[0]));
    const std::string rep(csv::unquote(f[1]));
    if (!data.contains(var)) var_order.push_back(var);
    auto& reps = data[var];
    if (!reps.contains(rep)) rep_order[var].push_back(rep);
    reps[rep].t.push_back(t);
    reps[rep].v.push_back(v);
  }
  FittedCurves out;
  bool have_grid = false;
  for (const auto& var : var_order) {
    VariableCurves vc;
    vc.id = var;
    for (const auto& rep : rep_order[var]) {
      const Series& s = data[var][rep];
      const Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(s.t.data(),
                                                                  static_cast<Eigen::Index>(s.t.size()));
      const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(s.v.data(),
                                                                  static_cast<Eigen::Index>(s.v.size()));
      if (!have_grid) {
        out.grid = t;
        have_grid = true;
      } else if (t.size() != out.grid.size() || (t - out.grid).cwiseAbs().maxCoeff() > 1e-12) {
        throw ValidationError("curves for variable '" + var + "' use a different grid");
      }
      if (rep.empty()) {
        vc.mean = v;
      } else {
        vc.replicate_ids.push_back(rep);
        vc.replicates.push_back(v);
      }
    }
    if (vc.mean.size() == 0) {
      throw ValidationError("curves file has no mean curve for variable '" + var + "'");
    }
    out.variables.push_back(std::move(vc));
  }
  return out;
}

FittedCurves read_curves_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open curves file " + path.string());
  return read_curves_csv(in);
}

}  // namespace mlfpca
