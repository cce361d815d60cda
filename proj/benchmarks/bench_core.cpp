#include <vector>

#include <benchmark/benchmark.h>

#include "mlfpca/basis.hpp"
#include "mlfpca/fit_gaussian.hpp"
#include "mlfpca/fit_stn.hpp"
#include "mlfpca/model.hpp"
#include "mlfpca/simulate.hpp"
#include "mlfpca/stn.hpp"

namespace {

using namespace mlfpca;

SimulatedData make_data(std::size_t variables, std::size_t replicates) {
  SimDesign d = preset("default");
  d.variables = variables;
  d.replicates = replicates;
  d.seed = 11;
  return generate(d);
}

void BM_PosteriorWoodbury(benchmark::State& state) {
  const auto sim = make_data(1, static_cast<std::size_t>(state.range(0)));
  const Designs designs = assemble_designs(sim.dataset, sim.basis);
  for (auto _ : state) {
    benchmark::DoNotOptimize(gaussian_posterior(sim.truth_params, 0, designs[0]));
  }
}
BENCHMARK(BM_PosteriorWoodbury)->Arg(5)->Arg(20)->Arg(80);

void BM_PosteriorDense(benchmark::State& state) {
  const auto sim = make_data(1, static_cast<std::size_t>(state.range(0)));
  const Designs designs = assemble_designs(sim.dataset, sim.basis);
  for (auto _ : state) {
    benchmark::DoNotOptimize(gaussian_posterior_dense(sim.truth_params, 0, designs[0]));
  }
}
BENCHMARK(BM_PosteriorDense)->Arg(5)->Arg(20)->Arg(80);

void BM_GaussianEStep(benchmark::State& state) {
  const auto sim = make_data(100, 5);
  const Designs designs = assemble_designs(sim.dataset, sim.basis);
  for (auto _ : state) {
    benchmark::DoNotOptimize(e_step_gaussian(sim.truth_params, designs));
  }
}
BENCHMARK(BM_GaussianEStep);

void BM_BasisBuild(benchmark::State& state) {
  const std::vector<double> times{0, 2, 4, 6, 8};
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        SplineBasis::build(BasisKind::natural_cubic, times, {}, static_cast<int>(state.range(0))));
  }
}
BENCHMARK(BM_BasisBuild)->Arg(101)->Arg(1001);

void BM_GibbsSweep(benchmark::State& state) {
  SimDesign d = preset("default");
  d.variables = 1;
  const std::vector<StNParams> laws{{0.0, 0.3, 2.0, 5.0}, {0.0, 0.1, -1.0, 8.0}};
  d.alpha_stn = laws;
  const auto sim = generate(d);
  MultiLevelParams params = sim.truth_params;
  params.alpha_law = StnLoadings{laws};
  const Designs designs = assemble_designs(sim.dataset, sim.basis);
  GibbsState chains = initial_gibbs_state(params, sim.truth_loadings);
  Rng rng = make_stream(1, {});
  for (auto _ : state) {
    gibbs_sweep(chains.chains[0], params, 0, designs[0], rng);
    benchmark::DoNotOptimize(chains.chains[0].x.data());
  }
}
BENCHMARK(BM_GibbsSweep);

void BM_StnLogPdf(benchmark::State& state) {
  const StNParams p{0.0, 1.0, 2.0, 5.0};
  double z = -3.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(stn_log_pdf(z, p));
    z = z > 3.0 ? -3.0 : z + 0.01;
  }
}
BENCHMARK(BM_StnLogPdf);

}  // namespace

BENCHMARK_MAIN();
