#include <benchmark/benchmark.h>

#include "latent_atlas/generator.hpp"

using namespace latent_atlas;

namespace {

struct Fixture {
  Generator<float> g = Generator<float>::random_init(GeneratorConfig{}, 1);
  SynthesisTape<float> tape{&g};
  std::vector<Tensor<float>> styles;
  Tensor<float> d_image;

  Fixture() {
    Rng rng(2);
    auto code = sample_code(g, Space::kWPlus, rng);
    styles = g.expand_styles(code);
    const int r = g.config().output_resolution;
    d_image = Tensor<float>::gaussian({1, 3, r, r}, rng);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

static void BM_SynthesisForward(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) {
    benchmark::DoNotOptimize(f.tape.forward(f.styles));
  }
}
BENCHMARK(BM_SynthesisForward);

static void BM_SynthesisForwardBackward(benchmark::State& state) {
  auto& f = fixture();
  std::vector<Tensor<float>> d_styles;
  for (auto _ : state) {
    f.tape.forward(f.styles);
    f.tape.backward(f.d_image, d_styles, nullptr, nullptr);
    benchmark::DoNotOptimize(d_styles);
  }
}
BENCHMARK(BM_SynthesisForwardBackward);

static void BM_MappingForward(benchmark::State& state) {
  auto& f = fixture();
  Rng rng(3);
  Tensor<float> z({1, f.g.config().latent_dim});
  auto s = sphere_sample<float>(f.g.config().latent_dim, rng);
  std::copy(s.data(), s.data() + s.numel(), z.data());
  MappingTape<float> tape;
  for (auto _ : state) {
    benchmark::DoNotOptimize(tape.forward(f.g, z));
  }
}
BENCHMARK(BM_MappingForward);

static void BM_Retract(benchmark::State& state) {
  Rng rng(4);
  Tensor<float> z = Tensor<float>::gaussian({64}, rng);
  for (auto _ : state) {
    retract_inplace(z);
    benchmark::DoNotOptimize(z);
  }
}
BENCHMARK(BM_Retract);

BENCHMARK_MAIN();
