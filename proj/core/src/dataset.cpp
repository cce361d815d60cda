#include "mlfpca/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <tuple>

#include "csv.hpp"
#include "mlfpca/error.hpp"

namespace mlfpca {
using namespace csv;

Eigen::Index VariablePanel::total_observations() const {
  Eigen::Index n = 0;
  for (const auto& r : replicates) n += r.size();
  return n;
}

Eigen::VectorXd VariablePanel::stacked_values() const {
  Eigen::VectorXd y(total_observations());
  Eigen::Index row = 0;
  for (const auto& r : replicates) {
    y.segment(row, r.size()) = r.values;
    row += r.size();
  }
  return y;
}

Eigen::VectorXd VariablePanel::stacked_times() const {
  Eigen::VectorXd t(total_observations());
  Eigen::Index row = 0;
  for (const auto& r : replicates) {
    t.segment(row, r.size()) = r.times;
    row += r.size();
  }
  return t;
}

Dataset Dataset::from_observations(std::vector<Observation> observations) {
  for (const auto& o : observations) {
    if (!std::isfinite(o.time) || !std::isfinite(o.value)) {
      throw ValidationError("non-finite time or value for variable '" +
                            o.variable_id + "', replicate '" + o.replicate_id +
                            "'");
    }
  }
  std::sort(observations.begin(), observations.end(),
            [](const Observation& a, const Observation& b) {
              return std::tie(a.variable_id, a.replicate_id, a.time) <
                     std::tie(b.variable_id, b.replicate_id, b.time);
            });
  for (std::size_t k = 1; k < observations.size(); ++k) {
    const auto& a = observations[k - 1];
    const auto& b = observations[k];
    if (a.variable_id == b.variable_id && a.replicate_id == b.replicate_id &&
        a.time == b.time) {
      throw ValidationError("duplicate observation (" + a.variable_id + ", " +
                            a.replicate_id + ", " + format_double(a.time) + ")");
    }
  }

  Dataset ds;
  std::size_t k = 0;
  while (k < observations.size()) {
    VariablePanel panel;
    panel.id = observations[k].variable_id;
    while (k < observations.size() && observations[k].variable_id == panel.id) {
      const std::string& rep = observations[k].replicate_id;
      std::size_t end = k;
      while (end < observations.size() &&
             observations[end].variable_id == panel.id &&
             observations[end].replicate_id == rep) {
        ++end;
      }
      ReplicateSeries series;
      series.id = rep;
      series.times.resize(static_cast<Eigen::Index>(end - k));
      series.values.resize(static_cast<Eigen::Index>(end - k));
      for (std::size_t m = k; m < end; ++m) {
        series.times(static_cast<Eigen::Index>(m - k)) = observations[m].time;
        series.values(static_cast<Eigen::Index>(m - k)) = observations[m].value;
      }
      panel.replicates.push_back(std::move(series));
      k = end;
    }
    if (panel.replicates.size() < 2) {
      throw ValidationError("variable '" + panel.id +
                            "' has fewer than 2 replicates");
    }
    ds.variables_.push_back(std::move(panel));
  }
  return ds;
}

Eigen::Index Dataset::total_observations() const {
  Eigen::Index n = 0;
  for (const auto& v : variables_) n += v.total_observations();
  return n;
}

std::vector<Observation> Dataset::observations() const {
  std::vector<Observation> out;
  out.reserve(static_cast<std::size_t>(total_observations()));
  for (const auto& v : variables_) {
    for (const auto& r : v.replicates) {
      for (Eigen::Index t = 0; t < r.size(); ++t) {
        out.push_back({v.id, r.id, r.times(t), r.values(t)});
      }
    }
  }
  return out;
}

Dataset Dataset::subset(std::size_t i) const {
  Dataset ds;
  ds.variables_.push_back(variables_.at(i));
  return ds;
}

Dataset read_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) {
    throw ValidationError("empty CSV input: missing header");
  }
  ++line_no;
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (trim(line) != "variable,replicate,time,value") {
    throw ValidationError(
        "line 1: header must be exactly 'variable,replicate,time,value'");
  }

  std::vector<Observation> rows;
  while (std::getline(in, line)) {
    ++line_no;
    const auto content = trim(line);
    if (content.empty()) continue;
    const auto fields = split_fields(content);
    const auto where = "line " + std::to_string(line_no) + ": ";
    if (fields.size() != 4) {
      throw ValidationError(where + "expected 4 fields, found " +
                            std::to_string(fields.size()));
    }
    Observation obs;
    obs.variable_id = std::string(unquote(fields[0]));
    obs.replicate_id = std::string(unquote(fields[1]));
    if (obs.variable_id.empty() || obs.replicate_id.empty()) {
      throw ValidationError(where + "empty variable or replicate id");
    }
    if (!parse_double(fields[2], obs.time) || !std::isfinite(obs.time)) {
      throw ValidationError(where + "invalid time '" + std::string(fields[2]) + "'");
    }
    if (fields[3].empty()) continue;  // missing value
    if (!parse_double(fields[3], obs.value) || !std::isfinite(obs.value)) {
      throw ValidationError(where + "invalid value '" + std::string(fields[3]) + "'");
    }
    rows.push_back(std::move(obs));
  }
  return Dataset::from_observations(std::move(rows));
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  return read_csv(in);
}

void write_csv(const Dataset& ds, std::ostream& out) {
  out << "variable,replicate,time,value\n";
  for (const auto& o : ds.observations()) {
    out << o.variable_id << ',' << o.replicate_id << ',' << format_double(o.time)
        << ',' << format_double(o.value) << '\n';
  }
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  write_csv(ds, out);
}

std::vector<double> design_times(const Dataset& ds) {
  std::vector<double> times;
  for (const auto& v : ds.variables()) {
    for (const auto& r : v.replicates) {
      times.insert(times.end(), r.times.begin(), r.times.end());
    }
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  return times;
}

}  // namespace mlfpca
