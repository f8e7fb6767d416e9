#include <benchmark/benchmark.h>

#include <random>

#include "jointcar/covariance.hpp"
#include "jointcar/oracle.hpp"
#include "jointcar/sampler.hpp"
#include "jointcar/sim_study.hpp"

namespace {

void BM_CarCovariance(benchmark::State& state) {
  const auto g = jcar::lattice_graph(2, static_cast<int>(state.range(0)), true);
  for (auto _ : state) benchmark::DoNotOptimize(jcar::car_covariance(g, {1.0, 0.5}));
  state.SetLabel("J=" + std::to_string(g.n_locations()));
}
BENCHMARK(BM_CarCovariance)->Arg(13)->Arg(50);

void BM_AssembleJoint(benchmark::State& state) {
  const auto g = jcar::SimDesign::default_sim_graph();
  const std::vector<Eigen::MatrixXd> sigmas(3, jcar::car_covariance(g, {1.0, 0.5}));
  Eigen::MatrixXd p(3, 3);
  p << 1, .5, .2, .5, 1, .3, .2, .3, 1;
  for (auto _ : state) benchmark::DoNotOptimize(jcar::assemble_joint(sigmas, p));
}
BENCHMARK(BM_AssembleJoint);

jcar::OracleCase bench_case(int g) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  auto lower = [&]() {
    Eigen::MatrixXd l = Eigen::MatrixXd::Identity(g, g);
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < i; ++j) l(i, j) = 0.2 * z(rng);
    return l;
  };
  jcar::OracleCase c;
  c.l_pred = lower();
  c.l_obs1 = lower();
  c.l_obs2 = lower();
  c.r = 0.5 * Eigen::MatrixXd::Identity(g, g);
  c.rho = 0.6;
  c.structure = jcar::MissingStructure::Discrepancy;
  return c;
}

void BM_PredictDiscrepancy(benchmark::State& state) {
  const int g = static_cast<int>(state.range(0));
  const auto c = bench_case(g);
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(g);
  for (auto _ : state) benchmark::DoNotOptimize(jcar::predict_discrepancy(c, x, x));
}
BENCHMARK(BM_PredictDiscrepancy)->Arg(4)->Arg(13);

void BM_FisherGeneral(benchmark::State& state) {
  const auto s22 = jcar::discrepancy_s22(0.5 * Eigen::MatrixXd::Identity(13, 13));
  for (auto _ : state) benchmark::DoNotOptimize(jcar::fisher_general(s22, 0.6));
}
BENCHMARK(BM_FisherGeneral);

// Cost per MCMC iteration on the simulation design (J=26, K=10, two populations).
void BM_SamplerIterations(benchmark::State& state) {
  jcar::SimDesign d;
  d.seed = 3;
  const auto data = jcar::generate(d);
  const auto kind = static_cast<jcar::ModelKind>(state.range(0));
  jcar::McmcConfig cfg;
  cfg.n_iterations = 500;
  cfg.burn_in = 250;
  cfg.n_chains = 1;
  cfg.seed = 1;
  cfg.workers = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(jcar::fit(data.panel, d.graph, kind, jcar::Priors{}, cfg));
  }
  state.SetItemsProcessed(state.iterations() * cfg.n_iterations);
  state.SetLabel(jcar::to_string(kind));
}
BENCHMARK(BM_SamplerIterations)
    ->Arg(static_cast<int>(jcar::ModelKind::Mixed))
    ->Arg(static_cast<int>(jcar::ModelKind::Car))
    ->Arg(static_cast<int>(jcar::ModelKind::JointCar))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
