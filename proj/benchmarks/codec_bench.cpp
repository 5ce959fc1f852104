#include <benchmark/benchmark.h>

#include "msnc/codec.hpp"
#include "msnc/model.hpp"
#include "msnc/rans.hpp"
#include "msnc/training.hpp"

namespace {

using msnc::Rng;
using msnc::Shape;
using msnc::Tensor;

template <typename T>
Tensor<T> rand_tensor(Shape shape, Rng& rng) {
  std::vector<T> v(msnc::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform() * 2 - 1);
  return Tensor<T>::from_vector(std::move(shape), std::move(v));
}

void BM_MatmulF32(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(1, 1);
  auto a = rand_tensor<float>({n, n}, rng);
  auto b = rand_tensor<float>({n, n}, rng);
  msnc::NoGradGuard ng;
  for (auto _ : state) benchmark::DoNotOptimize(msnc::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_MatmulF32)->Arg(64)->Arg(256)->Arg(512);

void BM_TokenAggregatedAttention(benchmark::State& state) {
  Rng rng(2, 1);
  Rng prng(3, 1);
  auto p = msnc::AttentionParams<float>::make(32, 2, prng);
  auto x = rand_tensor<float>({32, 32, 32}, rng);
  msnc::NoGradGuard ng;
  for (auto _ : state)
    benchmark::DoNotOptimize(msnc::token_aggregated_attention(x, p, 4, 4));
}
BENCHMARK(BM_TokenAggregatedAttention);

void BM_AnalysisForward64(benchmark::State& state) {
  auto model = msnc::CodecModel<float>::init(msnc::ModelConfig::desk(), 1);
  Rng rng(4, 1);
  auto x = rand_tensor<float>({64, 64, 9}, rng);
  msnc::NoGradGuard ng;
  msnc::ModeShiftSampler shifts;
  for (auto _ : state) benchmark::DoNotOptimize(model.analysis.forward(x, shifts));
}
BENCHMARK(BM_AnalysisForward64);

void BM_TrainingStep(benchmark::State& state) {
  auto model = msnc::CodecModel<float>::init(msnc::ModelConfig::desk(), 1);
  Rng rng(5, 1);
  auto x = rand_tensor<float>({64, 64, 9}, rng);
  int step = 0;
  for (auto _ : state) {
    msnc::RandomShiftSampler shifts(Rng(6, step));
    Rng noise(7, step++);
    auto fwd = msnc::training_forward(model, x, 0.0125, shifts, noise);
    msnc::backward(fwd.parts.loss);
    model.zero_grads();
  }
}
BENCHMARK(BM_TrainingStep);

void BM_RansEncode(benchmark::State& state) {
  msnc::CdfTable table = msnc::build_gaussian_cdf_table();
  Rng rng(8, 1);
  const int64_t n = 1 << 16;
  std::vector<int32_t> syms(n), ids(n);
  for (int64_t i = 0; i < n; ++i) {
    ids[i] = static_cast<int32_t>(rng.below(64));
    const auto& ctx = table.contexts[ids[i]];
    syms[i] = ctx.min_sym +
              static_cast<int32_t>(rng.below(static_cast<uint32_t>(ctx.symbol_count())));
  }
  for (auto _ : state) benchmark::DoNotOptimize(msnc::rans_encode(syms, ids, table));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_RansEncode);

void BM_CompressImage(benchmark::State& state) {
  auto model = msnc::CodecModel<float>::init(msnc::ModelConfig::desk(), 1);
  auto tables = msnc::build_entropy_tables(model);
  auto corpus = msnc::synth_generate(9, 1, 64, 64, 9);
  for (auto _ : state)
    benchmark::DoNotOptimize(msnc::compress_image(model, tables, corpus[0], 0));
}
BENCHMARK(BM_CompressImage);

}  // namespace

BENCHMARK_MAIN();
