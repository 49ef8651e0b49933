// Microbenchmarks for the hot compute paths: convolution, LOAN, the
// classifier stack and a full forward/backward step at production width.
//
//   ./benchmarks/loancast_bench --benchmark_min_time=0.5s

#include <benchmark/benchmark.h>

#include <random>

#include "loancast/loan.hpp"
#include "loancast/model.hpp"
#include "loancast/nn.hpp"

using namespace loancast;

namespace {

template <typename T>
Tensor<T> rand_tensor(Shape shape, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0, 1);
  std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from_vector(std::move(shape), std::move(v));
}

void BM_Conv3dBlock1(benchmark::State& state) {
  std::mt19937_64 rng(1);
  auto p = make_conv<float>(10, 16, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng);
  auto x = rand_tensor<float>({4, 10, 10, 25, 25}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv3d(x, p));
}
BENCHMARK(BM_Conv3dBlock1);

void BM_Conv3dBlock3(benchmark::State& state) {
  std::mt19937_64 rng(1);
  auto p = make_conv<float>(32, 256, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng);
  auto x = rand_tensor<float>({4, 32, 10, 6, 6}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv3d(x, p));
}
BENCHMARK(BM_Conv3dBlock3);

void BM_Conv2dStatic(benchmark::State& state) {
  std::mt19937_64 rng(1);
  auto p = make_conv<float>(15, 16, {3, 3}, {1, 1}, {1, 1}, rng);
  auto x = rand_tensor<float>({4, 15, 25, 25}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, p));
}
BENCHMARK(BM_Conv2dStatic);

void BM_LoanApply(benchmark::State& state) {
  std::mt19937_64 rng(1);
  auto layer = make_loan_layer<float>(LoanVariant::kActivationConditioned, 16, 16, true, rng);
  auto z_d = rand_tensor<float>({4, 16, 10, 25, 25}, 2);
  auto cond = rand_tensor<float>({4, 16, 25, 25}, 3);
  for (auto _ : state)
    benchmark::DoNotOptimize(loan_apply(layer, z_d, cond, Mode::kTrain));
}
BENCHMARK(BM_LoanApply);

void BM_ForwardEval(benchmark::State& state) {
  ModelConfig cfg;
  Model<float> model(cfg, 1);
  auto dyn = rand_tensor<float>({8, 10, 10, 25, 25}, 2);
  auto stat = rand_tensor<float>({8, 15, 25, 25}, 3);
  std::vector<int> tau(8, 150);
  (void)model.forward(dyn, stat, tau, Mode::kTrain);  // init running stats
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(dyn, stat, tau, Mode::kEval));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ForwardEval);

void BM_TrainStep(benchmark::State& state) {
  ModelConfig cfg;
  Model<float> model(cfg, 1);
  auto dyn = rand_tensor<float>({8, 10, 10, 25, 25}, 2);
  auto stat = rand_tensor<float>({8, 15, 25, 25}, 3);
  std::vector<int> tau(8, 150);
  std::vector<int> labels{0, 1, 0, 1, 0, 1, 0, 1};
  auto params = model.trainable_params();
  for (auto _ : state) {
    Tape<float> tape;
    Tape<float>::Scope scope(tape);
    auto loss = bce_loss(model.forward(dyn, stat, tau, Mode::kTrain), labels);
    for (auto& p : params) p.zero_grad();
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
