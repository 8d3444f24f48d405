#include <benchmark/benchmark.h>

#include <random>

#include "psae/beamline.hpp"
#include "psae/loss.hpp"
#include "psae/model.hpp"
#include "psae/ops.hpp"
#include "psae/tape.hpp"

using namespace psae;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor<float> t(std::move(shape));
  for (float& v : t.data()) v = u(rng);
  return t;
}

void BM_ConvTransposeForward(benchmark::State& state) {
  const auto extent = static_cast<std::size_t>(state.range(0));
  ConvTransposeSpec s;
  s.in_channels = 16;
  s.out_channels = 8;
  s.kernel = {5, 5};
  s.stride = {2, 2};
  s.padding = {2, 2};
  s.output_padding = {1, 1};
  Parameter<float> w("w", random_tensor(s.weight_shape(), 1, -0.1f, 0.1f)), b("b", random_tensor({8}, 2));
  const Tensor<float> x = random_tensor({16, 16, extent, extent}, 3);
  for (auto _ : state) {
    Tape<float> tape(false);
    benchmark::DoNotOptimize(tape.value(conv_transpose2d(tape, tape.constant(x), tape.parameter(w), tape.parameter(b), s)));
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_ConvTransposeForward)->Arg(12)->Arg(24)->Unit(benchmark::kMillisecond);

void BM_ConvTransposeBackward(benchmark::State& state) {
  ConvTransposeSpec s;
  s.in_channels = 16;
  s.out_channels = 8;
  s.kernel = {5, 5};
  s.stride = {2, 2};
  s.padding = {2, 2};
  s.output_padding = {1, 1};
  Parameter<float> w("w", random_tensor(s.weight_shape(), 1, -0.1f, 0.1f)), b("b", random_tensor({8}, 2));
  const Tensor<float> x = random_tensor({16, 16, 24, 24}, 3);
  const Tensor<float> cot = random_tensor({16, 8, 48, 48}, 4);
  for (auto _ : state) {
    Tape<float> tape;
    const Var y = conv_transpose2d(tape, tape.input(x), tape.parameter(w), tape.parameter(b), s);
    tape.backward(weighted_sum(tape, y, cot));
  }
}
BENCHMARK(BM_ConvTransposeBackward)->Unit(benchmark::kMillisecond);

void BM_MsSsimWithGrad(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const Tensor<float> ref = random_tensor({rows, rows * 4 / 3}, 5);
  const Tensor<float> pred = random_tensor({rows, rows * 4 / 3}, 6);
  const MsSsimConfig cfg;
  std::vector<double> grad(pred.size());
  for (auto _ : state) benchmark::DoNotOptimize(ms_ssim_with_grad(ref, pred, cfg, grad));
}
BENCHMARK(BM_MsSsimWithGrad)->Arg(96)->Arg(192)->Unit(benchmark::kMillisecond);

void BM_DeskForward(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const Autoencoder model = Autoencoder::build(EncoderConfig{}, DecoderConfig::desk(), 1);
  const Tensor<float> phases = random_tensor({batch, 3}, 7, -1.0f, 1.0f);
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(phases, "WP1"));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch));
}
BENCHMARK(BM_DeskForward)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_DeskTrainStep(benchmark::State& state) {
  Autoencoder model = Autoencoder::build(EncoderConfig{}, DecoderConfig::desk(), 1);
  const Tensor<float> phases = random_tensor({16, 3}, 8, -1.0f, 1.0f);
  const Tensor<float> targets = model.predict(random_tensor({16, 3}, 9, -1.0f, 1.0f), "WP1");
  const MsSsimConfig cfg;
  for (auto _ : state) {
    for (auto& ref : model.parameters()) ref.param->zero_grad();
    Tape<float> tape;
    const Var y = model.forward(tape, tape.constant(phases), "WP1", BatchNormMode::train);
    tape.backward(ms_ssim_loss(tape, targets, y, cfg));
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_DeskTrainStep)->Unit(benchmark::kMillisecond);

void BM_SimulateShot(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(sample_dataset(WorkingPoint::WP1, 1, ++seed));
}
BENCHMARK(BM_SimulateShot)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
