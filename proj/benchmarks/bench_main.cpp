#include <sparseflow/cnf.hpp>
#include <sparseflow/data.hpp>
#include <sparseflow/hessian.hpp>
#include <sparseflow/net.hpp>
#include <sparseflow/prune.hpp>

#include <benchmark/benchmark.h>

using namespace sparseflow;

namespace {

MlpSpec toy_spec(std::size_t hidden) { return MlpSpec::for_dimension(2, {hidden}, Activation::sigmoid); }

void BM_MlpForwardDivergence(benchmark::State& state) {
  const auto batch = static_cast<Eigen::Index>(state.range(0));
  const MlpSpec spec = toy_spec(128);
  MlpBatch net(spec);
  const ParamVector p = mlp_init(spec, 0);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Random(2, batch);
  const ProbeSet probes = ProbeSet::unit_vectors(2, static_cast<std::size_t>(batch));
  Eigen::MatrixXd f;
  Eigen::VectorXd div;
  for (auto _ : state) {
    net.forward_with_divergence(p, z, 0.5, probes, f, div);
    benchmark::DoNotOptimize(div.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_MlpForwardDivergence)->Arg(128)->Arg(1024);

void BM_MlpBackwardDivergence(benchmark::State& state) {
  const auto batch = static_cast<Eigen::Index>(state.range(0));
  const MlpSpec spec = toy_spec(128);
  MlpBatch net(spec);
  const ParamVector p = mlp_init(spec, 0);
  const Eigen::MatrixXd z = Eigen::MatrixXd::Random(2, batch);
  const ProbeSet probes = ProbeSet::unit_vectors(2, static_cast<std::size_t>(batch));
  const Eigen::MatrixXd cot = Eigen::MatrixXd::Ones(2, batch);
  const Eigen::VectorXd cot_div = Eigen::VectorXd::Ones(batch);
  Eigen::MatrixXd f, gz;
  Eigen::VectorXd div;
  ParamVector gp = ParamVector::Zero(p.size());
  for (auto _ : state) {
    net.forward_with_divergence(p, z, 0.5, probes, f, div);
    net.backward(p, cot, &cot_div, gz, gp);
    benchmark::DoNotOptimize(gp.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_MlpBackwardDivergence)->Arg(128)->Arg(1024);

void BM_LogProbDopri5(benchmark::State& state) {
  const FlowModel m = FlowModel::create(toy_spec(128), 0, {}, {DivergenceKind::exact});
  const Points x = make_dataset(DatasetKind::gaussians, 1024, 0).points;
  for (auto _ : state) benchmark::DoNotOptimize(log_prob_batch(m, x).sum());
  state.SetItemsProcessed(state.iterations() * x.cols());
}
BENCHMARK(BM_LogProbDopri5)->Unit(benchmark::kMillisecond);

void BM_NllGradAdjoint(benchmark::State& state) {
  const FlowModel m = FlowModel::create(toy_spec(128), 0, {}, {});
  const Points x = make_dataset(DatasetKind::gaussians, 1024, 0).points;
  Rng noise(1);
  for (auto _ : state) benchmark::DoNotOptimize(nll_grad(m, x, noise).loss);
  state.SetItemsProcessed(state.iterations() * x.cols());
}
BENCHMARK(BM_NllGradAdjoint)->Unit(benchmark::kMillisecond);

void BM_HessianVectorProduct(benchmark::State& state) {
  const FlowModel m = FlowModel::create(toy_spec(128), 0, {}, {DivergenceKind::exact});
  const Points x = make_dataset(DatasetKind::gaussians, 256, 0).points;
  const CurvatureObjective obj = flow_objective(m, x, {});
  const ParamVector v = ParamVector::Ones(obj.theta.size());
  for (auto _ : state) benchmark::DoNotOptimize(hvp(obj, v, 1e-4).sum());
}
BENCHMARK(BM_HessianVectorProduct)->Unit(benchmark::kMillisecond);

void BM_UnstructuredPrune(benchmark::State& state) {
  const MlpSpec spec = MlpSpec::for_dimension(2, {64, 64, 64}, Activation::sigmoid);
  const ParamVector p = mlp_init(spec, 0);
  const Mask m = Mask::ones(static_cast<std::size_t>(p.size()));
  for (auto _ : state) benchmark::DoNotOptimize(apply_prune(p, m, spec, PruneMode::unstructured, 0.1).count());
}
BENCHMARK(BM_UnstructuredPrune);

}  // namespace
BENCHMARK_MAIN();
