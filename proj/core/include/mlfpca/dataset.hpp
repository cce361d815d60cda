#ifndef MLFPCA_DATASET_HPP
#define MLFPCA_DATASET_HPP

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mlfpca {

struct Observation {
  std::string variable_id;
  std::string replicate_id;
  double time = 0.0;
  double value = 0.0;

  bool operator==(const Observation&) const = default;
};

/// Observations of one replicate of one variable, sorted by time.
struct ReplicateSeries {
  std::string id;
  Eigen::VectorXd times;
  Eigen::VectorXd values;

  [[nodiscard]] Eigen::Index size() const { return times.size(); }
};

struct VariablePanel {
  std::string id;
  std::vector<ReplicateSeries> replicates;

  [[nodiscard]] Eigen::Index total_observations() const;
  /// y_i: replicate vectors stacked in replicate order.
  [[nodiscard]] Eigen::VectorXd stacked_values() const;
  [[nodiscard]] Eigen::VectorXd stacked_times() const;
};

/// A validated ragged panel of replicated time series. Variables and
/// replicates are ordered lexicographically by id; within a replicate the
/// observations are ordered by time. Immutable once built.
class Dataset {
 public:
  Dataset() = default;

  /// Validates and indexes raw observations.
  /// Throws ValidationError on duplicate (variable, replicate, time) triples,
  /// non-finite fields, or variables with fewer than two replicates.
  static Dataset from_observations(std::vector<Observation> observations);

  [[nodiscard]] const std::vector<VariablePanel>& variables() const {
    return variables_;
  }
  [[nodiscard]] const VariablePanel& variable(std::size_t i) const {
    return variables_.at(i);
  }
  [[nodiscard]] std::size_t num_variables() const { return variables_.size(); }
  [[nodiscard]] Eigen::Index total_observations() const;

  /// Flattened observations in iteration order.
  [[nodiscard]] std::vector<Observation> observations() const;

  /// Dataset restricted to a single variable.
  [[nodiscard]] Dataset subset(std::size_t i) const;

 private:
  std::vector<VariablePanel> variables_;
};

/// Reads the long CSV format `variable,replicate,time,value`. Rows whose
/// value field is empty are treated as missing and dropped.
Dataset load_csv(const std::filesystem::path& path);
Dataset read_csv(std::istream& in);

void write_csv(const Dataset& ds, const std::filesystem::path& path);
void write_csv(const Dataset& ds, std::ostream& out);

/// Sorted, deduplicated union of all observation times.
std::vector<double> design_times(const Dataset& ds);

}  // namespace mlfpca

#endif  // MLFPCA_DATASET_HPP
