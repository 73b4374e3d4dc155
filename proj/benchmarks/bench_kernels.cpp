#include <benchmark/benchmark.h>

#include "ifer/encoder.hpp"
#include "ifer/synthesis.hpp"
#include "ifer/toy_faces.hpp"

using namespace ifer;

namespace {

void setup() {
  torch::set_num_threads(1);
  torch::manual_seed(0);
}

void BM_ModulatedConv(benchmark::State& state) {
  setup();
  const int64_t side = state.range(0);
  auto x = torch::randn({8, 64, side, side}), w = torch::randn({64, 64, 3, 3}), s = torch::randn({8, 64});
  for (auto _ : state) benchmark::DoNotOptimize(modulated_conv(x, w, s, true));
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_ModulatedConv)->Arg(8)->Arg(16)->Arg(32)->Unit(benchmark::kMicrosecond);

void BM_WindowAttention(benchmark::State& state) {
  setup();
  const int64_t window = state.range(0);
  WindowAttention attn(64, 4);
  torch::NoGradGuard no_grad;
  auto x = torch::randn({8, 16, 16, 64});
  for (auto _ : state) benchmark::DoNotOptimize(attn->forward(x, window));
}
BENCHMARK(BM_WindowAttention)->Arg(4)->Arg(8)->Arg(16)->Unit(benchmark::kMicrosecond);

void BM_Synthesize(benchmark::State& state) {
  setup();
  ToyGenerator g(GeneratorConfig{});
  torch::NoGradGuard no_grad;
  const auto& c = g->config();
  auto sc = StructureCode{torch::randn({8, c.struct_dim, 4, 4})};
  auto codes = LatentCodes{torch::randn({8, c.n_layers(), c.code_dim})};
  for (auto _ : state) benchmark::DoNotOptimize(g->synthesize(sc, codes).image);
}
BENCHMARK(BM_Synthesize)->Unit(benchmark::kMillisecond);

void BM_Encode(benchmark::State& state) {
  setup();
  AsitEncoder e(EncoderConfig{});
  torch::NoGradGuard no_grad;
  auto x = torch::rand({state.range(0), 3, 64, 64});
  for (auto _ : state) benchmark::DoNotOptimize(e->forward(x).codes.codes);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Encode)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_RenderFace(benchmark::State& state) {
  auto params = sample_params(64, 7, Split::train);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(render_face(params[i++ % params.size()]));
}
BENCHMARK(BM_RenderFace)->Unit(benchmark::kMicrosecond);

}  // namespace

BENCHMARK_MAIN();
