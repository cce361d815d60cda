#include "mlfpca/model_io.hpp"

#include <fstream>

#include "mlfpca/error.hpp"

namespace mlfpca {
namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json vector_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

// Matrices are stored column by column, so each entry is one coefficient vector.
json columns_json(const Eigen::MatrixXd& m) {
  json cols = json::array();
  for (Eigen::Index c = 0; c < m.cols(); ++c) cols.push_back(vector_json(m.col(c)));
  return cols;
}

Eigen::VectorXd vector_from(const json& j, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string("model field '") + what +
                                           "' must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) {
      throw ValidationError(std::string("model field '") + what + "' holds a non-number");
    }
    v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
  }
  return v;
}

Eigen::MatrixXd columns_from(const json& j, Eigen::Index rows, const char* what) {
  if (!j.is_array()) throw ValidationError(std::string("model field '") + what +
                                           "' must be an array");
  Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(j.size()));
  for (std::size_t c = 0; c < j.size(); ++c) {
    const Eigen::VectorXd col = vector_from(j[c], what);
    if (col.size() != rows) {
      throw ValidationError(std::string("model field '") + what + "' has a column of length " +
                            std::to_string(col.size()) + ", expected " + std::to_string(rows));
    }
    m.col(static_cast<Eigen::Index>(c)) = col;
  }
  return m;
}

const json& field(const json& obj, const char* name) {
  const auto it = obj.find(name);
  if (it == obj.end()) throw ValidationError(std::string("model is missing field '") + name + "'");
  return *it;
}

}  // namespace

json to_json(const FittedModel& model) {
  const auto& p = model.params;
  json doc;
  doc["format"] = "mlfpca-model";
  doc["version"] = kFormatVersion;
  doc["model"] = model.metadata.model;
  doc["basis"] = {{"kind", to_string(model.basis.kind)},
                  {"knots", model.basis.knots},
                  {"t_min", model.basis.t_min},
                  {"t_max", model.basis.t_max},
                  {"grid_size", model.basis.grid_size}};
  json ranks_rep = json::array();
  for (const auto& v : p.variables) ranks_rep.push_back(v.theta_beta.cols());
  doc["ranks"] = {{"variable", p.variable_rank()}, {"replicate", ranks_rep}};
  doc["theta_mu"] = vector_json(p.theta_mu);
  doc["theta_alpha"] = columns_json(p.theta_alpha);
  if (p.is_gaussian()) {
    doc["variable_level"] = {{"law", "gaussian"}, {"d_alpha", vector_json(p.d_alpha())}};
  } else {
    json comps = json::array();
    for (const auto& s : p.stn()) {
      comps.push_back({{"xi", s.xi}, {"sigma2", s.sigma2}, {"lambda", s.lambda}, {"nu", s.nu}});
    }
    doc["variable_level"] = {{"law", "skew-t-normal"}, {"components", comps}};
  }
  json vars = json::array();
  for (std::size_t i = 0; i < p.variables.size(); ++i) {
    const auto& v = p.variables[i];
    json jv;
    jv["id"] = model.variable_ids.at(i);
    jv["replicates"] = model.replicate_ids.at(i);
    jv["theta_beta"] = columns_json(v.theta_beta);
    jv["d_beta"] = vector_json(v.d_beta);
    jv["sigma2"] = v.sigma2;
    jv["loadings"] = vector_json(model.loadings.at(i));
    vars.push_back(std::move(jv));
  }
  doc["variables"] = std::move(vars);
  json fit;
  fit["iterations"] = model.metadata.iterations;
  fit["converged"] = model.metadata.converged;
  fit["log_likelihood"] = model.metadata.log_likelihood ? json(*model.metadata.log_likelihood)
                                                        : json(nullptr);
  fit["diagnostics"] = model.metadata.diagnostics;
  doc["fit"] = std::move(fit);
  return doc;
}

FittedModel fitted_model_from_json(const json& doc) {
  try {
    if (field(doc, "format") != "mlfpca-model") {
      throw ValidationError("not an mlfpca model document");
    }
    if (field(doc, "version").get<int>() != kFormatVersion) {
      throw ValidationError("unsupported model format version");
    }
    FittedModel m;
    m.metadata.model = field(doc, "model").get<std::string>();
    const json& jb = field(doc, "basis");
    m.basis.kind = basis_kind_from_string(field(jb, "kind").get<std::string>());
    m.basis.knots = field(jb, "knots").get<std::vector<double>>();
    m.basis.t_min = field(jb, "t_min").get<double>();
    m.basis.t_max = field(jb, "t_max").get<double>();
    m.basis.grid_size = field(jb, "grid_size").get<int>();

    auto& p = m.params;
    p.theta_mu = vector_from(field(doc, "theta_mu"), "theta_mu");
    const Eigen::Index dim = p.theta_mu.size();
    p.theta_alpha = columns_from(field(doc, "theta_alpha"), dim, "theta_alpha");
    const json& level = field(doc, "variable_level");
    const auto law = field(level, "law").get<std::string>();
    if (law == "gaussian") {
      p.alpha_law = GaussianLoadings{vector_from(field(level, "d_alpha"), "d_alpha")};
    } else if (law == "skew-t-normal") {
      StnLoadings s;
      for (const auto& c : field(level, "components")) {
        s.components.push_back({field(c, "xi").get<double>(), field(c, "sigma2").get<double>(),
                                field(c, "lambda").get<double>(), field(c, "nu").get<double>()});
      }
      p.alpha_law = std::move(s);
    } else {
      throw ValidationError("unknown variable-level law '" + law + "'");
    }
    const Eigen::Index k = p.theta_alpha.cols();
    const Eigen::Index nlaw = p.is_gaussian() ? p.d_alpha().size()
                                              : static_cast<Eigen::Index>(p.stn().size());
    if (nlaw != k) throw ValidationError("variable-level law does not match the rank");

    for (const auto& jv : field(doc, "variables")) {
      m.variable_ids.push_back(field(jv, "id").get<std::string>());
      m.replicate_ids.push_back(field(jv, "replicates").get<std::vector<std::string>>());
      VariableParams vp;
      vp.theta_beta = columns_from(field(jv, "theta_beta"), dim, "theta_beta");
      vp.d_beta = vector_from(field(jv, "d_beta"), "d_beta");
      vp.sigma2 = field(jv, "sigma2").get<double>();
      if (vp.d_beta.size() != vp.theta_beta.cols()) {
        throw ValidationError("d_beta does not match theta_beta for variable '" +
                              m.variable_ids.back() + "'");
      }
      Eigen::VectorXd x = vector_from(field(jv, "loadings"), "loadings");
      const auto expected =
          k + static_cast<Eigen::Index>(m.replicate_ids.back().size()) * vp.theta_beta.cols();
      if (x.size() != expected) {
        throw ValidationError("loadings have the wrong length for variable '" +
                              m.variable_ids.back() + "'");
      }
      p.variables.push_back(std::move(vp));
      m.loadings.push_back(std::move(x));
    }
    const json& fit = field(doc, "fit");
    m.metadata.iterations = field(fit, "iterations").get<int>();
    m.metadata.converged = field(fit, "converged").get<bool>();
    const json& ll = field(fit, "log_likelihood");
    if (!ll.is_null()) m.metadata.log_likelihood = ll.get<double>();
    m.metadata.diagnostics = field(fit, "diagnostics").get<std::map<std::string, double>>();
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed model document: ") + e.what());
  }
}

void save_model(const FittedModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write model file " + path.string());
  out << to_json(model).dump(2) << '\n';
  if (!out) throw ValidationError("failed writing model file " + path.string());
}

FittedModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("model file " + path.string() + " is not valid JSON: " + e.what());
  }
  return fitted_model_from_json(doc);
}

FittedCurves model_curves(const FittedModel& model) {
  const SplineBasis basis = SplineBasis::from_spec(model.basis);
  const Eigen::MatrixXd& b = basis.grid_matrix();
  const auto& p = model.params;
  const Eigen::Index k = p.variable_rank();
  FittedCurves out;
  out.grid = basis.grid();
  for (std::size_t i = 0; i < model.variable_ids.size(); ++i) {
    VariableCurves vc;
    vc.id = model.variable_ids[i];
    const Eigen::VectorXd& x = model.loadings.at(i);
    Eigen::VectorXd coef = p.theta_mu;
    if (k > 0) coef += p.theta_alpha * x.head(k);
    vc.mean = b * coef;
    const Eigen::Index l = p.replicate_rank(i);
    for (std::size_t j = 0; j < model.replicate_ids[i].size(); ++j) {
      vc.replicate_ids.push_back(model.replicate_ids[i][j]);
      Eigen::VectorXd rc = coef;
      if (l > 0) rc += p.variables[i].theta_beta * x.segment(k + static_cast<Eigen::Index>(j) * l, l);
      vc.replicates.push_back(b * rc);
    }
    out.variables.push_back(std::move(vc));
  }
  return out;
}

}  // namespace mlfpca
