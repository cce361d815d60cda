#include "cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mlfpca/basis.hpp"
#include "mlfpca/dataset.hpp"
#include "mlfpca/error.hpp"
#include "mlfpca/fit_gaussian.hpp"
#include "mlfpca/fit_stn.hpp"
#include "mlfpca/model.hpp"
#include "mlfpca/model_io.hpp"
#include "mlfpca/rank_select.hpp"
#include "mlfpca/simulate.hpp"

namespace mlfpca::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct BasisOptions {
  std::string kind = "natural-cubic";
  std::vector<double> knots;
  int grid_size = kDefaultGridSize;
};

struct EmOptions {
  int max_iterations = 500;
  double tolerance = 1e-8;
  bool orthogonalize_each_iteration = false;
  double ridge = 1e-4;
};

struct FitOptions {
  std::string input;
  std::string output;
  std::string model = "gaussian";
  std::string rank_variable = "auto";
  std::string rank_replicate = "auto";
  double var_threshold = 0.99;
  double rep_threshold = 0.60;
  BasisOptions basis;
  EmOptions em;
  int sweeps = 100;
  int burn_in = 20;
  int mcem_iterations = 2000;
  int window = 50;
  double rel_change = 1e-3;
  bool cold_start = false;
  std::uint64_t seed = 1;
};

struct SimulateOptions {
  std::string output;
  std::string preset = "paper-3.1";
  std::optional<std::size_t> variables;
  std::optional<std::size_t> replicates;
  std::optional<std::uint64_t> seed;
  std::optional<double> sigma2;
  std::vector<double> times;
};

struct EvaluateOptions {
  std::vector<std::string> files;
  std::string output;
  bool study = false;
  std::string preset = "paper-3.1";
  std::vector<std::size_t> variables = {100};
  std::vector<std::size_t> replicates = {5};
  int repetitions = 50;
  std::uint64_t seed = 1;
  EmOptions em;
};

struct SelectRankOptions {
  std::string input;
  std::string output;
  double var_threshold = 0.99;
  double rep_threshold = 0.60;
  BasisOptions basis;
  EmOptions em;
};

struct PlotOptions {
  std::string model;
  std::string output;
  int pc = 1;
  double scale = 1.0;
  std::string level = "variable";
  std::string variable;
};

std::string env_name(const std::string& long_name) {
  std::string name = kEnvPrefix;
  for (char c : long_name) {
    name += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return name;
}

// Every named option of `app` also reads MLFPCA_<NAME>; the precedence is
// flag, then environment, then config file, then default.
void bind_environment(CLI::App* app) {
  for (CLI::Option* opt : app->get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help" || names.front() == "config") continue;
    opt->envname(env_name(names.front()));
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Reads a flat `key = value` file. Keys are long option names; values fill
// only options that neither a flag nor the environment has set.
void apply_config(CLI::App* app, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config file " + path);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';' || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(path + ":" + std::to_string(number) + ": expected `key = value`");
    }
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '[' && value.back() == ']') {
      value = trim(value.substr(1, value.size() - 2));
    }
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (value == "{}") value.clear();
    if (key == "config" || key == "manifest") continue;
    CLI::Option* opt = app->get_option_no_throw("--" + key);
    if (opt == nullptr) opt = app->get_option_no_throw(key);
    if (opt == nullptr) {
      throw ValidationError(path + ":" + std::to_string(number) + ": unknown key `" + key + "`");
    }
    if (value.empty() || opt->count() > 0) continue;
    opt->add_result(value);
    opt->run_callback();
  }
}

void add_common(CLI::App* app, int& threads, std::string& manifest, std::string& config) {
  app->add_option("--config", config, "Flat `key = value` file of option defaults")
      ->check(CLI::ExistingFile);
  app->add_option("--threads", threads, "Worker threads (0 = all cores)")
      ->check(CLI::NonNegativeNumber);
  app->add_option("--manifest", manifest, "Where to write the effective configuration");
}

void add_basis(CLI::App* app, BasisOptions& b) {
  app->add_option("--basis", b.kind, "Spline basis")
      ->check(CLI::IsMember({"natural-cubic", "bspline-cubic"}));
  app->add_option("--knots", b.knots, "Interior knots for bspline-cubic (default: centre)")
      ->delimiter(',');
  app->add_option("--grid-size", b.grid_size, "Fine grid length")->check(CLI::PositiveNumber);
}

void add_em(CLI::App* app, EmOptions& em) {
  app->add_option("--max-iterations", em.max_iterations, "EM iteration limit")
      ->check(CLI::PositiveNumber);
  app->add_option("--tolerance", em.tolerance, "Relative log-likelihood tolerance")
      ->check(CLI::PositiveNumber);
  app->add_flag("--orthogonalize-each-iteration", em.orthogonalize_each_iteration,
                "Orthogonalize after every M-step instead of once at the end");
  app->add_option("--ridge", em.ridge, "Ridge penalty of the initial fits")
      ->check(CLI::NonNegativeNumber);
}

EMConfig em_config(const EmOptions& o, int threads) {
  EMConfig c;
  c.max_iterations = o.max_iterations;
  c.loglik_rel_tolerance = o.tolerance;
  c.orthogonalize_each_iteration = o.orthogonalize_each_iteration;
  c.ridge_penalty_init = o.ridge;
  c.threads = threads;
  return c;
}

SplineBasis make_basis(const Dataset& ds, const BasisOptions& o) {
  const auto times = design_times(ds);
  const BasisKind kind = basis_kind_from_string(o.kind);
  std::optional<std::vector<double>> knots;
  if (!o.knots.empty()) {
    if (kind == BasisKind::natural_cubic) {
      throw ValidationError("--knots applies only to the bspline-cubic basis");
    }
    knots = o.knots;
  }
  return SplineBasis::build(kind, times, knots, o.grid_size);
}

std::optional<int> parse_rank(const std::string& text, const char* flag) {
  if (text == "auto") return std::nullopt;
  try {
    std::size_t used = 0;
    const int r = std::stoi(text, &used);
    if (used == text.size() && r >= 0) return r;
  } catch (const std::exception&) {
  }
  throw ValidationError(std::string(flag) + " must be a nonnegative integer or `auto`");
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  return out;
}

void write_json(const json& doc, const fs::path& path) {
  auto out = open_output(path);
  out << doc.dump(2) << '\n';
}

void write_manifest(const CLI::App* app, const std::string& path) {
  if (path.empty()) return;
  auto out = open_output(path);
  out << "# " << app->get_name() << '\n' << app->config_to_str(true, false);
}

std::vector<std::vector<std::string>> replicate_ids(const Dataset& ds) {
  std::vector<std::vector<std::string>> ids;
  for (const auto& v : ds.variables()) {
    auto& r = ids.emplace_back();
    for (const auto& rep : v.replicates) r.push_back(rep.id);
  }
  return ids;
}

std::vector<std::string> variable_ids(const Dataset& ds) {
  std::vector<std::string> ids;
  for (const auto& v : ds.variables()) ids.push_back(v.id);
  return ids;
}

// Log-likelihood of independent per-variable fits, holding each variable at
// its final value once it has stopped.
std::vector<EMTraceRow> combined_trace(const SingleLevelFit& fit) {
  std::size_t rows = 0;
  for (const auto& f : fit.variables) rows = std::max(rows, f.trace.size());
  std::vector<EMTraceRow> trace;
  for (std::size_t k = 0; k < rows; ++k) {
    EMTraceRow row;
    row.iteration = static_cast<int>(k);
    for (const auto& f : fit.variables) {
      if (f.trace.empty()) continue;
      row.loglik += f.trace[std::min(k, f.trace.size() - 1)].loglik;
    }
    row.delta = k == 0 ? std::numeric_limits<double>::quiet_NaN()
                       : row.loglik - trace.back().loglik;
    trace.push_back(row);
  }
  return trace;
}

int cmd_fit(const FitOptions& o, int threads, std::ostream& out) {
  const Dataset ds = load_csv(o.input);
  const SplineBasis basis = make_basis(ds, o.basis);
  const EMConfig em = em_config(o.em, threads);
  const fs::path dir = o.output;
  fs::create_directories(dir);

  std::optional<int> k = parse_rank(o.rank_variable, "--rank-variable");
  const std::optional<int> l = parse_rank(o.rank_replicate, "--rank-replicate");
  std::vector<int> replicate_ranks;
  if (l) replicate_ranks = {*l};
  if (!k || !l) {
    const RankSelection sel = select_ranks(ds, basis, o.var_threshold, o.rep_threshold, em);
    write_scree_csv(sel, dir / "scree.csv");
    if (!k) k = sel.variable_rank;
    if (!l) replicate_ranks = sel.replicate_ranks;
  }

  if (o.model == "single-level") {
    const SingleLevelFit fit = fit_singlelevel_gaussian(ds, basis, replicate_ranks, em);
    json doc{{"format", "mlfpca-single-level"}, {"version", 1}, {"variables", json::array()}};
    for (std::size_t i = 0; i < ds.num_variables(); ++i) {
      const auto& f = fit.variables[i];
      FittedModel m;
      m.basis = basis.spec();
      m.params = f.params;
      m.variable_ids = {ds.variable(i).id};
      m.replicate_ids = {replicate_ids(ds)[i]};
      m.loadings = posterior_means(f.moments);
      m.metadata = {"single-level", f.iterations, f.converged, f.log_likelihood, {}};
      doc["variables"].push_back(to_json(m));
    }
    write_json(doc, dir / "model.json");
    write_curves_csv(single_level_curves(fit, basis, ds), dir / "curves.csv");
    write_em_trace(combined_trace(fit), dir / "trace.csv");
    out << "single-level fit of " << ds.num_variables() << " variables written to "
        << dir.string() << '\n';
    return kSuccess;
  }

  FittedModel m;
  m.basis = basis.spec();
  m.variable_ids = variable_ids(ds);
  m.replicate_ids = replicate_ids(ds);
  if (o.model == "gaussian") {
    const GaussianFit fit = fit_multilevel_gaussian(ds, basis, *k, replicate_ranks, em);
    m.params = fit.params;
    m.loadings = posterior_means(fit.moments);
    m.metadata = {"gaussian", fit.iterations, fit.converged, fit.log_likelihood, {}};
    write_em_trace(fit.trace, dir / "trace.csv");
    out << "gaussian fit: K=" << *k << ", " << fit.iterations << " iterations, loglik "
        << fit.log_likelihood << (fit.converged ? "" : " (not converged)") << '\n';
  } else {
    GibbsConfig g;
    g.sweeps = o.sweeps;
    g.burn_in = o.burn_in;
    g.seed = o.seed;
    g.mcem_iterations = o.mcem_iterations;
    g.convergence_window = o.window;
    g.convergence_rel_change = o.rel_change;
    g.warm_start = !o.cold_start;
    g.threads = threads;
    g.ridge_penalty_init = o.em.ridge;
    const StnFit fit = fit_multilevel_stn(ds, basis, *k, replicate_ranks, g);
    m.params = fit.params;
    m.loadings = posterior_means(fit.moments);
    m.metadata = {"stn", fit.iterations, fit.converged, std::nullopt, {}};
    if (!fit.relative_changes.empty()) {
      m.metadata.diagnostics["final_relative_change"] = fit.relative_changes.back();
    }
    m.metadata.diagnostics["sweeps"] = g.sweeps;
    m.metadata.diagnostics["burn_in"] = g.burn_in;
    write_stn_trace(fit.trace, dir / "trace.csv");
    out << "stn fit: K=" << *k << ", " << fit.iterations << " MCEM iterations"
        << (fit.converged ? "" : " (not converged)") << '\n';
  }
  save_model(m, dir / "model.json");
  write_curves_csv(model_curves(m), dir / "curves.csv");
  return kSuccess;
}

int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
  SimDesign d = preset(o.preset);
  if (o.variables) d.variables = *o.variables;
  if (o.replicates) d.replicates = *o.replicates;
  if (o.seed) d.seed = *o.seed;
  if (o.sigma2) d.sigma2 = *o.sigma2;
  if (!o.times.empty()) d.times = o.times;
  const SimulatedData sim = generate(d);

  const fs::path dir = o.output;
  fs::create_directories(dir);
  write_csv(sim.dataset, dir / "data.csv");
  write_curves_csv(sim.truth, dir / "truth_curves.csv");
  FittedModel m;
  m.basis = sim.basis.spec();
  m.params = sim.truth_params;
  m.variable_ids = variable_ids(sim.dataset);
  m.replicate_ids = replicate_ids(sim.dataset);
  m.loadings = sim.truth_loadings;
  m.metadata = {"gaussian", 0, true, std::nullopt, {}};
  save_model(m, dir / "truth_model.json");
  out << "simulated " << d.variables << " variables x " << d.replicates
      << " replicates into " << dir.string() << '\n';
  return kSuccess;
}

int cmd_evaluate(const EvaluateOptions& o, int threads, std::ostream& out) {
  if (o.study) {
    StudyConfig c;
    c.variable_counts = o.variables;
    c.replicate_counts = o.replicates;
    c.repetitions = o.repetitions;
    c.base = preset(o.preset);
    c.seed = o.seed;
    c.threads = threads;
    c.max_iterations = o.em.max_iterations;
    c.tolerance = o.em.tolerance;
    const auto rows = run_study(c);
    if (o.output.empty()) {
      write_study_csv(rows, out);
    } else {
      write_study_csv(rows, fs::path(o.output));
    }
    return kSuccess;
  }
  if (o.files.size() != 2) {
    throw ValidationError("evaluate needs a fitted and a truth curve file (or --study)");
  }
  const FittedCurves fitted = read_curves_csv(fs::path(o.files[0]));
  const FittedCurves truth = read_curves_csv(fs::path(o.files[1]));
  const MseSummary s = mse_variable_curves(fitted, truth);

  auto write_table = [&](std::ostream& os) {
    os << std::setprecision(std::numeric_limits<double>::max_digits10) << "variable,mse\n";
    for (std::size_t i = 0; i < s.per_variable.size(); ++i) {
      os << truth.variables[i].id << ',' << s.per_variable[i] << '\n';
    }
  };
  if (o.output.empty()) {
    write_table(out);
  } else {
    auto f = open_output(o.output);
    write_table(f);
    out << "mean_mse=" << s.mean << " sd_mse=" << s.sd << '\n';
  }
  return kSuccess;
}

int cmd_select_rank(const SelectRankOptions& o, int threads, std::ostream& out) {
  const Dataset ds = load_csv(o.input);
  const SplineBasis basis = make_basis(ds, o.basis);
  const RankSelection sel =
      select_ranks(ds, basis, o.var_threshold, o.rep_threshold, em_config(o.em, threads));
  const fs::path dir = o.output;
  fs::create_directories(dir);
  write_scree_csv(sel, dir / "scree.csv");
  json ranks{{"variable_rank", sel.variable_rank},
             {"replicate_ranks", json::object()},
             {"variable_threshold", o.var_threshold},
             {"replicate_threshold", o.rep_threshold}};
  for (std::size_t i = 0; i < sel.variable_ids.size(); ++i) {
    ranks["replicate_ranks"][sel.variable_ids[i]] = sel.replicate_ranks[i];
  }
  write_json(ranks, dir / "ranks.json");
  out << "K=" << sel.variable_rank << '\n';
  return kSuccess;
}

int cmd_plot_data(const PlotOptions& o, std::ostream& out) {
  const FittedModel m = load_model(o.model);
  const SplineBasis basis = SplineBasis::from_spec(m.basis);
  const auto& p = m.params;

  Eigen::VectorXd mean_coef = p.theta_mu;
  Eigen::VectorXd pc_coef;
  if (o.level == "variable") {
    if (o.pc > p.variable_rank()) {
      throw ValidationError("--pc exceeds the variable-level rank " +
                            std::to_string(p.variable_rank()));
    }
    pc_coef = p.theta_alpha.col(o.pc - 1);
  } else {
    const auto it = std::find(m.variable_ids.begin(), m.variable_ids.end(), o.variable);
    if (it == m.variable_ids.end()) {
      throw ValidationError("replicate-level plot data needs --variable naming a variable "
                            "of the model");
    }
    const auto i = static_cast<std::size_t>(it - m.variable_ids.begin());
    if (o.pc > p.replicate_rank(i)) {
      throw ValidationError("--pc exceeds the replicate-level rank of " + o.variable);
    }
    if (p.variable_rank() > 0 && i < m.loadings.size()) {
      mean_coef += p.theta_alpha * m.loadings[i].head(p.variable_rank());
    }
    pc_coef = p.variables[i].theta_beta.col(o.pc - 1);
  }
  const Eigen::VectorXd mean = basis.grid_values(mean_coef);
  const Eigen::VectorXd pc = o.scale * basis.grid_values(pc_coef);

  auto write_table = [&](std::ostream& os) {
    os << std::setprecision(std::numeric_limits<double>::max_digits10)
       << "time,mean,plus,minus\n";
    for (Eigen::Index g = 0; g < mean.size(); ++g) {
      os << basis.grid()(g) << ',' << mean(g) << ',' << mean(g) + pc(g) << ','
         << mean(g) - pc(g) << '\n';
    }
  };
  if (o.output.empty()) {
    write_table(out);
  } else {
    auto f = open_output(o.output);
    write_table(f);
  }
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-level reduced-rank functional PCA", "mlfpca"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", "mlfpca 0.1.0");

  int threads = 0;
  std::string manifest;
  std::string config;

  FitOptions fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model to a panel CSV");
  fit_cmd->add_option("input", fit.input, "Panel CSV `variable,replicate,time,value`")
      ->required()
      ->check(CLI::ExistingFile);
  fit_cmd->add_option("-o,--output", fit.output, "Output directory")->required();
  fit_cmd->add_option("--model", fit.model, "Model variant")
      ->check(CLI::IsMember({"gaussian", "stn", "single-level"}));
  fit_cmd->add_option("--rank-variable", fit.rank_variable, "K, or `auto`");
  fit_cmd->add_option("--rank-replicate", fit.rank_replicate, "L for every variable, or `auto`");
  fit_cmd->add_option("--var-threshold", fit.var_threshold,
                      "Variable-level variance share for automatic ranks");
  fit_cmd->add_option("--rep-threshold", fit.rep_threshold,
                      "Replicate-level variance share for automatic ranks");
  add_basis(fit_cmd, fit.basis);
  add_em(fit_cmd, fit.em);
  fit_cmd->add_option("--sweeps", fit.sweeps, "Gibbs sweeps per MCEM iteration (stn)")
      ->check(CLI::PositiveNumber);
  fit_cmd->add_option("--burn-in", fit.burn_in, "Discarded sweeps per MCEM iteration (stn)")
      ->check(CLI::NonNegativeNumber);
  fit_cmd->add_option("--mcem-iterations", fit.mcem_iterations, "MCEM iteration limit (stn)")
      ->check(CLI::PositiveNumber);
  fit_cmd->add_option("--window", fit.window, "Convergence window (stn)")
      ->check(CLI::PositiveNumber);
  fit_cmd->add_option("--rel-change", fit.rel_change, "Convergence threshold (stn)")
      ->check(CLI::PositiveNumber);
  fit_cmd->add_flag("--cold-start", fit.cold_start,
                    "Restart chains from the posterior means every MCEM iteration (stn)");
  fit_cmd->add_option("--seed", fit.seed, "Master seed (stn)");
  add_common(fit_cmd, threads, manifest, config);

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a simulated panel and its truth");
  sim_cmd->add_option("-o,--output", sim.output, "Output directory")->required();
  sim_cmd->add_option("--preset", sim.preset, "Simulation design preset");
  sim_cmd->add_option("--variables", sim.variables, "Number of variables M")
      ->check(CLI::PositiveNumber);
  sim_cmd->add_option("--replicates", sim.replicates, "Replicates per variable n")
      ->check(CLI::PositiveNumber);
  sim_cmd->add_option("--seed", sim.seed, "Seed");
  sim_cmd->add_option("--sigma2", sim.sigma2, "Noise variance")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--times", sim.times, "Design times")->delimiter(',');
  add_common(sim_cmd, threads, manifest, config);

  EvaluateOptions ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "Score fitted curves or run the MSE study");
  ev_cmd->add_option("files", ev.files, "Fitted and truth curve CSVs")->expected(0, 2);
  ev_cmd->add_option("-o,--output", ev.output, "Output CSV (default: standard output)");
  ev_cmd->add_flag("--study", ev.study, "Run the simulation study instead");
  ev_cmd->add_option("--preset", ev.preset, "Simulation design preset (study)");
  ev_cmd->add_option("--variables", ev.variables, "Variable counts (study)")->delimiter(',');
  ev_cmd->add_option("--replicates", ev.replicates, "Replicate counts (study)")
      ->delimiter(',');
  ev_cmd->add_option("--repetitions", ev.repetitions, "Data sets per cell (study)")
      ->check(CLI::PositiveNumber);
  ev_cmd->add_option("--seed", ev.seed, "Master seed (study)");
  ev_cmd->add_option("--max-iterations", ev.em.max_iterations, "EM iteration limit (study)")
      ->check(CLI::PositiveNumber);
  ev_cmd->add_option("--tolerance", ev.em.tolerance, "EM tolerance (study)")
      ->check(CLI::PositiveNumber);
  add_common(ev_cmd, threads, manifest, config);

  SelectRankOptions sr;
  auto* sr_cmd = app.add_subcommand("select-rank", "Choose ranks from a full-rank fit");
  sr_cmd->add_option("input", sr.input, "Panel CSV")->required()->check(CLI::ExistingFile);
  sr_cmd->add_option("-o,--output", sr.output, "Output directory")->required();
  sr_cmd->add_option("--var-threshold", sr.var_threshold, "Variable-level variance share");
  sr_cmd->add_option("--rep-threshold", sr.rep_threshold, "Replicate-level variance share");
  add_basis(sr_cmd, sr.basis);
  add_em(sr_cmd, sr.em);
  add_common(sr_cmd, threads, manifest, config);

  PlotOptions pl;
  auto* pl_cmd = app.add_subcommand("plot-data", "Emit mean +/- C * PC curves of a model");
  pl_cmd->add_option("model", pl.model, "Model JSON")->required()->check(CLI::ExistingFile);
  pl_cmd->add_option("-o,--output", pl.output, "Output CSV (default: standard output)");
  pl_cmd->add_option("--pc", pl.pc, "Component number, from 1")->check(CLI::PositiveNumber);
  pl_cmd->add_option("--scale", pl.scale, "Scaling constant C");
  pl_cmd->add_option("--level", pl.level, "Level of the component")
      ->check(CLI::IsMember({"variable", "replicate"}));
  pl_cmd->add_option("--variable", pl.variable, "Variable id (replicate level)");
  add_common(pl_cmd, threads, manifest, config);

  for (auto* sub : {fit_cmd, sim_cmd, ev_cmd, sr_cmd, pl_cmd}) bind_environment(sub);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kValidationFailure;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (!config.empty()) apply_config(sub, config);
    if (manifest.empty()) {
      if (name == "fit") manifest = (fs::path(fit.output) / "manifest.conf").string();
      if (name == "simulate") manifest = (fs::path(sim.output) / "manifest.conf").string();
      if (name == "select-rank") manifest = (fs::path(sr.output) / "manifest.conf").string();
    }
    int code = kSuccess;
    if (name == "fit") code = cmd_fit(fit, threads, out);
    if (name == "simulate") code = cmd_simulate(sim, out);
    if (name == "evaluate") code = cmd_evaluate(ev, threads, out);
    if (name == "select-rank") code = cmd_select_rank(sr, threads, out);
    if (name == "plot-data") code = cmd_plot_data(pl, out);
    write_manifest(sub, manifest);
    return code;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumericalFailure;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kValidationFailure;
  }
}

}  // namespace mlfpca::cli
