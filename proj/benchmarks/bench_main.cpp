#include <benchmark/benchmark.h>

#include <vector>

#include "evdet/checksum.hpp"
#include "evdet/evasion.hpp"
#include "evdet/features.hpp"
#include "evdet/lstm.hpp"
#include "evdet/optimizers.hpp"
#include "evdet/random.hpp"
#include "evdet/reassembly.hpp"

using namespace evdet;

namespace {

void BM_Checksum(benchmark::State& state) {
  Bytes data(static_cast<std::size_t>(state.range(0)));
  Rng(1).fill_bytes(data);
  for (auto _ : state) benchmark::DoNotOptimize(trace::ones_complement_finish(trace::ones_complement_accumulate(data)));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(BM_Checksum)->Arg(64)->Arg(1500)->Arg(65536);

void BM_ApplyEvasion(benchmark::State& state) {
  const auto clean = synth::generate_clean_flow(3, 8, 16, 64);
  synth::SynthParams p;
  const auto label = static_cast<synth::EvasionLabel>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(synth::apply_evasion(clean, label, p));
}
BENCHMARK(BM_ApplyEvasion)->DenseRange(0, 7);

void BM_NormalizeReceive(benchmark::State& state) {
  synth::SynthParams p;
  const auto t = synth::apply_evasion(synth::generate_clean_flow(4, 8, 16, 64), synth::EvasionLabel::kIpFrag, p);
  for (auto _ : state) benchmark::DoNotOptimize(trace::normalize_receive(t));
}
BENCHMARK(BM_NormalizeReceive);

void BM_ExtractSequences(benchmark::State& state) {
  synth::SynthParams p;
  const auto t = synth::apply_evasion(synth::generate_clean_flow(5, 8, 16, 64), synth::EvasionLabel::kTcpSeg, p);
  for (auto _ : state) benchmark::DoNotOptimize(features::extract_sequences(t, 5, 4));
}
BENCHMARK(BM_ExtractSequences);

nn::SequenceBatch<double> random_batch(int steps, int batch, int dim) {
  Rng rng(9);
  nn::SequenceBatch<double> b(steps, batch, dim);
  for (auto& len : b.lengths) len = steps;
  for (auto& m : b.inputs)
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1.0, 1.0);
  return b;
}

void BM_LstmForwardBackward(benchmark::State& state) {
  nn::ModelConfig mc;
  mc.hidden = static_cast<int>(state.range(0));
  const int batch = static_cast<int>(state.range(1));
  const nn::BiLstm<double> model(mc, 1);
  const auto b = random_batch(5, batch, mc.input_dim);
  std::vector<int> labels(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) labels[static_cast<std::size_t>(i)] = i % mc.classes;
  for (auto _ : state) {
    nn::ForwardTape<double> tape;
    model.forward(b, tape, {true, 0.0, 0});
    benchmark::DoNotOptimize(model.backward(tape, labels));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) * batch);
}
BENCHMARK(BM_LstmForwardBackward)->Args({64, 10})->Args({64, 50})->Args({64, 200})->Args({128, 50});

void BM_OptimizerStep(benchmark::State& state) {
  optim::OptimizerConfig c;
  c.kind = optim::kAllKinds[static_cast<std::size_t>(state.range(0))];
  const std::size_t n = 100000;
  std::vector<double> theta(n, 0.5), grads(n, 0.01);
  auto s = optim::make_state(c, n);
  for (auto _ : state) optim::optimizer_step(theta, grads, s, c);
  state.SetLabel(std::string(optim::to_string(c.kind)));
}
BENCHMARK(BM_OptimizerStep)->DenseRange(0, 8);

}  // namespace

BENCHMARK_MAIN();
