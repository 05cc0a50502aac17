// Hot paths of the attack loop: tape construction, flow transforms, the
// objective evaluation, and the k-NN metrics.

#include <benchmark/benchmark.h>

#include "vmi/attacks.hpp"
#include "vmi/metrics.hpp"
#include "vmi/rng.hpp"

using namespace vmi;

namespace {

CouplingFlow make_flow(std::size_t dim, std::size_t blocks) {
  RngStream rng(1);
  CouplingFlow flow = CouplingFlow::make(dim, blocks, 32, rng);
  for (ParamRef p : flow.mutable_params()) {
    if (p.name.ends_with("w3")) {
      for (double& v : *p.data) v = 0.1 * rng.normal();
    }
  }
  return flow;
}

void BM_TapeMatmulBackward(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  RngStream rng(2);
  Tensor a = Tensor::randn({n, 64}, rng);
  Tensor w = Tensor::randn({64, 64}, rng);
  for (auto _ : state) {
    ad::Tape tape;
    ad::Value av = tape.leaf(a);
    ad::Value wv = tape.leaf(w);
    ad::Value out = ad::mean(ad::tanh(ad::matmul(av, wv)));
    tape.backward(out);
    benchmark::DoNotOptimize(tape.grad(wv));
  }
}
BENCHMARK(BM_TapeMatmulBackward)->Arg(16)->Arg(64)->Arg(256);

void BM_FlowForward(benchmark::State& state) {
  CouplingFlow flow = make_flow(8, static_cast<std::size_t>(state.range(0)));
  RngStream rng(3);
  Tensor z = Tensor::randn({64, 8}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(flow.forward(z));
  }
}
BENCHMARK(BM_FlowForward)->Arg(8)->Arg(30);

void BM_FlowLogProb(benchmark::State& state) {
  CouplingFlow flow = make_flow(8, static_cast<std::size_t>(state.range(0)));
  RngStream rng(4);
  Tensor z = Tensor::randn({64, 8}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(flow.log_prob(z));
  }
}
BENCHMARK(BM_FlowLogProb)->Arg(8)->Arg(30);

void BM_VmiLossStep(benchmark::State& state) {
  RngStream rng(5);
  QuadraticLogitTask task = QuadraticLogitTask::random(8, 4, rng);
  LinearGaussianGenerator gen(Tensor::identity(8), std::vector<double>(8, 0.0), 0.0);
  Family fam = make_flow(8, static_cast<std::size_t>(state.range(0)));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    RngStream step_rng(seed++);
    std::vector<std::vector<double>> grads;
    benchmark::DoNotOptimize(vmi_loss(fam, gen, task, 0, 1e-3, 64, step_rng, &grads));
  }
}
BENCHMARK(BM_VmiLossStep)->Arg(8)->Arg(30);

void BM_KnnMetrics(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  RngStream rng(6);
  Tensor real = Tensor::randn({n, 16}, rng);
  Tensor gen = Tensor::randn({n, 16}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(precision_recall(real, gen, 5));
    benchmark::DoNotOptimize(density_coverage(real, gen, 5));
  }
}
BENCHMARK(BM_KnnMetrics)->Arg(100)->Arg(500);

}  // namespace

BENCHMARK_MAIN();
