#ifndef MLFPCA_MODEL_IO_HPP
#define MLFPCA_MODEL_IO_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mlfpca/basis.hpp"
#include "mlfpca/model.hpp"

namespace mlfpca {

struct FitMetadata {
  std::string model = "gaussian";  // "gaussian", "stn" or "single-level"
  int iterations = 0;
  bool converged = false;
  std::optional<double> log_likelihood;
  std::map<std::string, double> diagnostics;
};

/// A fitted model together with everything needed to rebuild its curves.
struct FittedModel {
  BasisSpec basis;
  MultiLevelParams params;
  std::vector<std::string> variable_ids;
  std::vector<std::vector<std::string>> replicate_ids;
  /// Posterior mean loadings per variable, laid out like VariableMoments::mean.
  std::vector<Eigen::VectorXd> loadings;
  FitMetadata metadata;
};

nlohmann::json to_json(const FittedModel& model);
FittedModel fitted_model_from_json(const nlohmann::json& doc);

void save_model(const FittedModel& model, const std::filesystem::path& path);
FittedModel load_model(const std::filesystem::path& path);

/// Curves of a saved model on its basis grid.
FittedCurves model_curves(const FittedModel& model);

}  // namespace mlfpca

#endif  // MLFPCA_MODEL_IO_HPP
