// Serial reference kernels against their OpenMP versions.
#include <map>
#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "calsm/kernels.hpp"
#include "calsm/simgen.hpp"

namespace {

using namespace calsm;

struct Fixture {
  Network net;
  MatrixXd means;
  std::vector<MatrixXd> covs;
  MatrixXd xi, a;

  explicit Fixture(int n) {
    sim::SimScenario s;
    s.n = n;
    s.p = 20;
    s.seed = 7;
    sim::SimTruth truth = sim::simulate(s);
    net = truth.network;
    means = truth.x_star;
    covs.assign(static_cast<std::size_t>(n), 0.05 * MatrixXd::Identity(2, 2));
    kernels::serial::tangent_update(moments(), xi, a);
  }

  kernels::PredictorMoments moments() const { return {means, covs, -2.0, 0.1}; }
};

const Fixture& fixture(int n) {
  static std::map<int, Fixture> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, Fixture(n)).first;
  return it->second;
}

void BM_TangentUpdateSerial(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  MatrixXd xi, a;
  for (auto _ : state) {
    kernels::serial::tangent_update(f.moments(), xi, a);
    benchmark::DoNotOptimize(xi.data());
  }
}

void BM_TangentUpdateParallel(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  MatrixXd xi, a;
  for (auto _ : state) {
    kernels::tangent_update(f.moments(), xi, a);
    benchmark::DoNotOptimize(xi.data());
  }
}

void BM_TangentLoglikSerial(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::tangent_loglik(f.net, f.moments(), f.xi, 1.0));
}

void BM_TangentLoglikParallel(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::tangent_loglik(f.net, f.moments(), f.xi, 1.0));
}

void BM_PairLoglikSerial(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::pair_loglik(f.net, -2.0, f.means));
}

void BM_PairLoglikParallel(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::pair_loglik(f.net, -2.0, f.means));
}

void BM_ProbabilitiesSerial(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  MatrixXd out;
  for (auto _ : state) {
    kernels::serial::probabilities(-2.0, f.means, out);
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_ProbabilitiesParallel(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<int>(state.range(0)));
  MatrixXd out;
  for (auto _ : state) {
    kernels::probabilities(-2.0, f.means, out);
    benchmark::DoNotOptimize(out.data());
  }
}

}  // namespace

BENCHMARK(BM_TangentUpdateSerial)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TangentUpdateParallel)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TangentLoglikSerial)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TangentLoglikParallel)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PairLoglikSerial)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PairLoglikParallel)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ProbabilitiesSerial)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ProbabilitiesParallel)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
