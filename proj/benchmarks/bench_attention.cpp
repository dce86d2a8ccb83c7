// Microbenchmarks for the attention kernels: the sliding-chunk path against
// the masked-dense reference across grid sizes, the rival mechanisms at a
// fixed grid, and the raw matmul underneath them all.

#include <cstddef>

#include <benchmark/benchmark.h>

#include "vilong/attention.hpp"
#include "vilong/ops.hpp"
#include "vilong/rng.hpp"
#include "vilong/tensor.hpp"

namespace {

using namespace vilong;

AttentionSpec bench_spec(AttnKind kind) {
  AttentionSpec spec;
  spec.kind = kind;
  spec.heads = 3;
  spec.dim = 96;
  spec.n_global = 1;
  spec.window = 15;
  spec.linformer_k = 256;
  spec.sra_ratio = 2;
  spec.performer_features = 256;
  return spec;
}

struct Fixture {
  AttentionSpec spec;
  MsaParams<float> params;
  RpbTable<float> rpb;
  Tensor<float> tokens;
  std::size_t side;

  Fixture(AttnKind kind, std::size_t side_in) : side(side_in) {
    Rng rng(4242);
    spec = bench_spec(kind);
    params = make_msa_params<float>(spec, side * side, rng);
    rpb = make_rpb_table<float>(spec.heads, 2 * spec.chunk_size(), rng);
    tokens = uniform_init<float>({spec.n_global + side * side, spec.dim}, -1.0, 1.0, rng);
  }
};

void BM_matmul(benchmark::State& state) {
  const std::size_t n = std::size_t(state.range(0));
  Rng rng(7);
  Tensor<float> a = uniform_init<float>({n, n}, -1.0, 1.0, rng);
  Tensor<float> b = uniform_init<float>({n, n}, -1.0, 1.0, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(matmul(a, b));
  }
  state.SetItemsProcessed(std::int64_t(state.iterations()) * std::int64_t(n * n * n));
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_sliding_chunk_forward(benchmark::State& state) {
  Fixture f(AttnKind::ViL, std::size_t(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        vil_sliding_chunk_forward(f.tokens, f.params, f.spec, f.side, f.side, &f.rpb));
  }
}
BENCHMARK(BM_sliding_chunk_forward)->Arg(28)->Arg(56)->Arg(112)->Unit(benchmark::kMillisecond);

void BM_masked_dense_forward(benchmark::State& state) {
  Fixture f(AttnKind::ViL, std::size_t(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        vil_masked_dense_forward(f.tokens, f.params, f.spec, f.side, f.side, &f.rpb));
  }
}
BENCHMARK(BM_masked_dense_forward)->Arg(28)->Arg(56)->Unit(benchmark::kMillisecond);

void BM_sliding_chunk_train_step(benchmark::State& state) {
  Fixture f(AttnKind::ViL, std::size_t(state.range(0)));
  const Tensor<float> dout = Tensor<float>::full(f.tokens.shape(), 1.0f);
  for (auto _ : state) {
    MsaCache<float> cache;
    benchmark::DoNotOptimize(
        msa_forward(f.tokens, f.params, f.spec, f.side, f.side, &f.rpb, &cache));
    benchmark::DoNotOptimize(msa_backward(f.params, cache, dout));
  }
}
BENCHMARK(BM_sliding_chunk_train_step)->Arg(28)->Arg(56)->Unit(benchmark::kMillisecond);

void BM_global_forward(benchmark::State& state) {
  Fixture f(AttnKind::Global, 28);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        global_attention_forward(f.tokens, f.params, f.spec, f.side, f.side, &f.rpb));
  }
}
BENCHMARK(BM_global_forward)->Unit(benchmark::kMillisecond);

void BM_linformer_forward(benchmark::State& state) {
  Fixture f(AttnKind::Linformer, 28);
  for (auto _ : state) {
    benchmark::DoNotOptimize(linformer_forward(f.tokens, f.params, f.spec, f.side, f.side));
  }
}
BENCHMARK(BM_linformer_forward)->Unit(benchmark::kMillisecond);

void BM_sra_forward(benchmark::State& state) {
  Fixture f(AttnKind::SRA, 28);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sra_forward(f.tokens, f.params, f.spec, f.side, f.side));
  }
}
BENCHMARK(BM_sra_forward)->Unit(benchmark::kMillisecond);

void BM_performer_forward(benchmark::State& state) {
  Fixture f(AttnKind::Performer, 28);
  for (auto _ : state) {
    benchmark::DoNotOptimize(performer_forward(f.tokens, f.params, f.spec, f.side, f.side));
  }
}
BENCHMARK(BM_performer_forward)->Unit(benchmark::kMillisecond);

void BM_build_vil_mask(benchmark::State& state) {
  const std::size_t side = std::size_t(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        build_vil_mask(side, side, 1, 15, MaskingMode::SlidingChunkNoPad, 0));
  }
}
BENCHMARK(BM_build_vil_mask)->Arg(28)->Arg(56)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
