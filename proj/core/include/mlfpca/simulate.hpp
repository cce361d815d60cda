#ifndef MLFPCA_SIMULATE_HPP
#define MLFPCA_SIMULATE_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mlfpca/basis.hpp"
#include "mlfpca/dataset.hpp"
#include "mlfpca/model.hpp"
#include "mlfpca/stn.hpp"

namespace mlfpca {

/// Shape constants of the simulation truth, as coefficients of the clamped
/// cubic B-splines with one central knot (control points sit at 0, 1/6, 1/2,
/// 5/6 and 1 of the way along the time range).
namespace sim_shapes {
inline constexpr double kGrandMean[5] = {0.0, 1.6, -0.3, -0.5, -0.2};
// Rotates the first half: raises the start while lowering the peak.
inline constexpr double kVariablePc1[5] = {1.0, -0.5, 0.0, 0.0, 0.0};
// Rotates the second half about the centre.
inline constexpr double kVariablePc2[5] = {0.0, 0.0, 0.0, 0.5, 1.0};
// Scales the height of the early peak.
inline constexpr double kReplicatePc[5] = {0.0, 1.0, 0.2, 0.0, 0.0};
}  // namespace sim_shapes

struct SimDesign {
  std::size_t variables = 100;
  std::size_t replicates = 5;
  std::vector<double> times = {0.0, 2.0, 4.0, 6.0, 8.0};
  Eigen::VectorXd d_alpha = (Eigen::VectorXd(2) << 0.3, 0.1).finished();
  double d_beta = 0.075;
  double sigma2 = 0.05;
  std::uint64_t seed = 1;
  int grid_size = kDefaultGridSize;
  /// When set, alpha_ik is drawn from these laws shifted to mean zero
  /// instead of N(0, d_alpha_k).
  std::optional<std::vector<StNParams>> alpha_stn;

  void validate() const;
};

/// The default simulation design: K = 2, L = 1, D_alpha = diag(0.3, 0.1),
/// d_beta = 0.075, sigma^2 = 0.05, five time points.
SimDesign default_preset();
/// Named presets; throws ValidationError for unknown names.
SimDesign preset(const std::string& name);

struct SimulatedData {
  Dataset dataset;
  SplineBasis basis;
  MultiLevelParams truth_params;
  std::vector<Eigen::VectorXd> truth_loadings;
  FittedCurves truth;
};

/// Cubic B-spline basis with one central knot over the design's time range.
SplineBasis simulation_basis(const SimDesign& design);
/// True theta_mu, Theta_alpha (p x 2, orthonormal) and theta_beta (p x 1, unit norm).
MultiLevelParams simulation_truth(const SimDesign& design, const SplineBasis& basis);

SimulatedData generate(const SimDesign& design);

struct MseSummary {
  std::vector<double> per_variable;
  double mean = 0.0;
  double sd = 0.0;
};

/// Mean over the fine grid of the squared difference between fitted and true
/// variable mean curves, matched by variable id.
MseSummary mse_variable_curves(const FittedCurves& fitted, const FittedCurves& truth);

enum class StudyFitter { multi_level, single_level };
std::string to_string(StudyFitter f);

struct StudyConfig {
  std::vector<std::size_t> variable_counts = {100};
  std::vector<std::size_t> replicate_counts = {5};
  int repetitions = 50;
  std::vector<StudyFitter> fitters = {StudyFitter::multi_level, StudyFitter::single_level};
  SimDesign base = default_preset();
  std::uint64_t seed = 1;
  int threads = 1;
  int max_iterations = 500;
  double tolerance = 1e-8;
};

struct StudyRow {
  std::size_t variables = 0;
  std::size_t replicates = 0;
  StudyFitter fitter = StudyFitter::multi_level;
  double mean_mse = 0.0;
  double sd_mse = 0.0;  // across all variable-level MSEs of the cell
  int repetitions = 0;  // successful fits
  int failures = 0;
};

/// Generates, fits with the true ranks, and scores every cell. Failed fits
/// are counted, not fatal.
std::vector<StudyRow> run_study(const StudyConfig& config);
void write_study_csv(const std::vector<StudyRow>& rows, std::ostream& out);
void write_study_csv(const std::vector<StudyRow>& rows, const std::filesystem::path& path);

/// Writes curves in the long format `variable,replicate,time,value`;
/// variable mean curves have an empty replicate field.
void write_curves_csv(const FittedCurves& curves, std::ostream& out);
void write_curves_csv(const FittedCurves& curves, const std::filesystem::path& path);
FittedCurves read_curves_csv(std::istream& in);
FittedCurves read_curves_csv(const std::filesystem::path& path);

}  // namespace mlfpca

#endif  // MLFPCA_SIMULATE_HPP
