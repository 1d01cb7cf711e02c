#include <benchmark/benchmark.h>

#include "ditfuse/flow.hpp"
#include "ditfuse/m3.hpp"
#include "ditfuse/metrics.hpp"
#include "ditfuse/train.hpp"

using namespace ditfuse;

namespace {

Tensor<float> filled(std::vector<std::size_t> shape, Rng& rng) {
  Tensor<float> t = Tensor<float>::zeros(shape);
  for (auto& v : t.mutable_data()) v = static_cast<float>(rng.normal());
  return t;
}

LatentGrid latent(std::size_t side, std::size_t c, Rng& rng) {
  LatentGrid g(side, side, c);
  for (auto& v : g.data) v = static_cast<float>(rng.normal());
  return g;
}

ModelConfig small_model(std::size_t d) {
  ModelConfig m;
  m.d_model = d;
  m.n_layers = 2;
  m.n_heads = 4;
  m.lora_rank = 16;
  return m;
}

const char* kPrompt = "[FUSION] <img><|image_1|></img> <img><|image_2|></img> fuse the images";

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const auto a = filled({n, n}, rng), b = filled({n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

static void BM_AttentionMask(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto layout = assemble_sequence(tokenize(kPrompt), {side, side}, side * side);
  for (auto _ : state) benchmark::DoNotOptimize(build_attention_mask(layout));
  state.counters["seq_len"] = static_cast<double>(layout.length());
}
BENCHMARK(BM_AttentionMask)->Arg(8)->Arg(16);

static void BM_Forward(benchmark::State& state) {
  const auto cfg = small_model(static_cast<std::size_t>(state.range(0)));
  const auto model = DiTModel<float>::init(cfg, 2);
  Rng rng(3);
  const std::size_t side = 8, c = cfg.latent_channels();
  const auto a = latent(side, c, rng), b = latent(side, c, rng), x = latent(side, c, rng);
  const std::size_t patches = (side / cfg.patch) * (side / cfg.patch);
  const auto layout = assemble_sequence(tokenize(kPrompt), {patches, patches}, patches);
  const auto mask = build_attention_mask(layout);
  const ForwardInputs in{&layout, &mask, {&a, &b}, &x, 0.5};
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, in));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  Config cfg;
  cfg.model = small_model(64);
  cfg.train.full_finetune = true;
  auto st = TrainerState::create(cfg);
  Rng rng(4);
  const std::size_t c = cfg.model.latent_channels();
  std::vector<TrainSample> samples;
  for (int i = 0; i < 8; ++i)
    samples.push_back({std::to_string(i), tokenize(kPrompt), latent(16, c, rng), latent(16, c, rng), latent(16, c, rng)});
  std::vector<const TrainSample*> batch;
  for (const auto& s : samples) batch.push_back(&s);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(st, batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_Sample(benchmark::State& state) {
  const auto cfg = small_model(64);
  const auto model = DiTModel<float>::init(cfg, 5);
  Rng rng(6);
  const std::size_t c = cfg.latent_channels();
  const Conditioning cond{tokenize(kPrompt), latent(8, c, rng), latent(8, c, rng)};
  const auto steps = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    Rng noise(7);
    benchmark::DoNotOptimize(sample_latent(model, cond, steps, 1.0, noise));
  }
}
BENCHMARK(BM_Sample)->Arg(4)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_M3Synthesis(benchmark::State& state) {
  const auto grid = static_cast<std::size_t>(state.range(0));
  const ImageBuf img = procedural_image(128, 128, 8);
  Rng meta(9);
  for (auto _ : state) {
    Rng rng(meta.next_u64());
    const auto plan = plan_degradation(128, 128, grid, 0.25, rng);
    benchmark::DoNotOptimize(synthesize_m3_pair(img, plan, rng));
  }
}
BENCHMARK(BM_M3Synthesis)->Arg(16)->Arg(32)->Arg(64);

static void BM_Metrics(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const ImageBuf a = procedural_image(side, side, 10), b = procedural_image(side, side, 11), f = procedural_image(side, side, 12);
  for (auto _ : state) {
    benchmark::DoNotOptimize(mse_psnr(f, a, b));
    benchmark::DoNotOptimize(entropy(f));
    benchmark::DoNotOptimize(sd(f));
    benchmark::DoNotOptimize(spatial_frequency(f));
    benchmark::DoNotOptimize(average_gradient(f));
  }
}
BENCHMARK(BM_Metrics)->Arg(128)->Arg(512);

BENCHMARK_MAIN();
