// Microbenchmarks for the training hot paths: the temporal convolution, the
// attention GEMMs, the alignment estimator and a whole-backbone forward.

#include <cstdint>
#include <vector>

#include <benchmark/benchmark.h>

#include "asmmd/autodiff.hpp"
#include "asmmd/conformer.hpp"
#include "asmmd/mmd.hpp"
#include "asmmd/rng.hpp"
#include "asmmd/splitbn.hpp"
#include "asmmd/tensor.hpp"

namespace {

using namespace asmmd;

Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return t;
}

void BM_Conv1dForward(benchmark::State& state) {
  Rng rng(1);
  const Value x = Value::leaf(random_tensor({16, 141, 5}, rng));
  const Value w = Value::leaf(random_tensor({40, 25, 5}, rng));
  const Value b = Value::leaf(random_tensor({40}, rng));
  for (auto _ : state) {
    Value y = conv1d_valid(x, w, b);
    benchmark::DoNotOptimize(y.raw());
  }
}
BENCHMARK(BM_Conv1dForward);

void BM_Conv1dBackward(benchmark::State& state) {
  Rng rng(2);
  Value x = Value::leaf(random_tensor({16, 141, 5}, rng), true, "x");
  Value w = Value::leaf(random_tensor({40, 25, 5}, rng), true, "w");
  Value b = Value::leaf(random_tensor({40}, rng), true, "b");
  for (auto _ : state) {
    x.zero_grad();
    w.zero_grad();
    b.zero_grad();
    Value loss = sum_all(conv1d_valid(x, w, b));
    backward(loss);
    benchmark::DoNotOptimize(w.grad().ptr());
  }
}
BENCHMARK(BM_Conv1dBackward);

void BM_AttentionGemm(benchmark::State& state) {
  Rng rng(3);
  const Value q = Value::leaf(random_tensor({30, 3, 40}, rng));
  const Value k = Value::leaf(random_tensor({30, 3, 40}, rng));
  for (auto _ : state) {
    Value scores = bmm(q, k, true);
    benchmark::DoNotOptimize(scores.raw());
  }
}
BENCHMARK(BM_AttentionGemm);

void BM_SplitBnTrain(benchmark::State& state) {
  Rng rng(4);
  SplitBatchNorm bn(40);
  const Value x = Value::leaf(random_tensor({16, 117, 40}, rng));
  for (auto _ : state) {
    Value y = bn.forward_train(x);
    benchmark::DoNotOptimize(y.raw());
  }
}
BENCHMARK(BM_SplitBnTrain);

void BM_Mmd2Unbiased(benchmark::State& state) {
  Rng rng(5);
  Value s = Value::leaf(random_tensor({32, 2}, rng), true, "s");
  Value t = Value::leaf(random_tensor({32, 2}, rng), true, "t");
  for (auto _ : state) {
    s.zero_grad();
    t.zero_grad();
    Value m = mmd2_unbiased(s, t, 1.0);
    backward(m);
    benchmark::DoNotOptimize(s.grad().ptr());
  }
}
BENCHMARK(BM_Mmd2Unbiased);

void BM_BackboneForward(benchmark::State& state) {
  const BackboneConfig cfg;
  Model model = Model::build(cfg, 1);
  Rng rng(6);
  const Tensor x = random_tensor({8, cfg.n_channels, cfg.n_samples}, rng);
  for (auto _ : state) {
    Value z = model.forward(x, Domain::source, Mode::eval, rng);
    benchmark::DoNotOptimize(z.raw());
  }
}
BENCHMARK(BM_BackboneForward);

}  // namespace

BENCHMARK_MAIN();
