#include "mlfpca/rank_select.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>

#include "mlfpca/error.hpp"

namespace mlfpca {

std::vector<VarianceShare> variance_shares(const Eigen::VectorXd& eigenvalues) {
  const Eigen::VectorXd v = eigenvalues.cwiseMax(0.0);
  const double total = v.sum();
  std::vector<VarianceShare> out;
  double running = 0.0;
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    running += v(k);
    const double share = total > 0.0 ? v(k) / total : 0.0;
    const double cumulative = total > 0.0 ? running / total : 0.0;
    out.push_back({static_cast<int>(k + 1), share, cumulative});
  }
  if (total > 0.0 && !out.empty()) out.back().cumulative = 1.0;
  return out;
}

int components_for_threshold(const std::vector<VarianceShare>& shares, double threshold) {
  if (!(threshold > 0.0) || threshold > 1.0) {
    throw ValidationError("variance threshold must lie in (0, 1]");
  }
  if (threshold >= 1.0) return static_cast<int>(shares.size());
  for (const auto& s : shares) {
    if (s.cumulative >= threshold) return s.component;
  }
  return static_cast<int>(shares.size());
}

RankSelection select_ranks(const Dataset& ds, const SplineBasis& basis,
                           double variable_threshold, double replicate_threshold,
                           const EMConfig& config) {
  for (const double t : {variable_threshold, replicate_threshold}) {
    if (!(t > 0.0) || t > 1.0) throw ValidationError("variance threshold must lie in (0, 1]");
  }
  const auto full = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(basis.dimension()), design_times(ds).size()));
  RankSelection out;
  out.full_fit = fit_multilevel_gaussian(ds, basis, full, {full}, config);
  const auto& p = out.full_fit.params;
  out.variable_shares = variance_shares(p.d_alpha());
  out.variable_rank = components_for_threshold(out.variable_shares, variable_threshold);
  for (std::size_t i = 0; i < p.variables.size(); ++i) {
    out.variable_ids.push_back(ds.variable(i).id);
    out.replicate_shares.push_back(variance_shares(p.variables[i].d_beta));
    out.replicate_ranks.push_back(
        components_for_threshold(out.replicate_shares.back(), replicate_threshold));
  }
  return out;
}

void write_scree_csv(const RankSelection& selection, std::ostream& out) {
  out.precision(17);
  out << "level,component,share,cumulative\n";
  for (const auto& s : selection.variable_shares) {
    out << "variable," << s.component << ',' << s.share << ',' << s.cumulative << '\n';
  }
  for (std::size_t i = 0; i < selection.replicate_shares.size(); ++i) {
    for (const auto& s : selection.replicate_shares[i]) {
      out << "replicate:" << selection.variable_ids[i] << ',' << s.component << ',' << s.share
          << ',' << s.cumulative << '\n';
    }
  }
}

void write_scree_csv(const RankSelection& selection, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write scree table to " + path.string());
  write_scree_csv(selection, out);
}

}  // namespace mlfpca
