#include <benchmark/benchmark.h>

#include "vtpt/degrade.hpp"

using namespace vtpt;

namespace {

Image canvas224() {
  Image img = Image::zeros(224, 224);
  Rng rng(9);
  for (float& v : img.data) v = static_cast<float>(rng.next_double());
  return img;
}

void BM_degrade_op(benchmark::State& state, Task task) {
  Image img = canvas224();
  DegradationSpec spec;
  spec.task = task;
  spec.patch = 16;
  spec.canvas_side = 224;
  spec.kernel_size = 9;
  uint64_t i = 0;
  for (auto _ : state) {
    Rng rng = Rng::derive(1, "bench", i++);
    benchmark::DoNotOptimize(make_sample(spec, img, rng).input.data.data());
  }
}

void BM_integrated(benchmark::State& state) {
  Image img = Image::zeros(320, 320);
  Rng fill(2);
  for (float& v : img.data) v = static_cast<float>(fill.next_double());
  DegradationSpec spec;
  spec.task = Task::integrated;
  spec.patch = 16;
  spec.canvas_side = 224;
  spec.aux_side = 320;
  uint64_t i = 0;
  for (auto _ : state) {
    Rng rng = Rng::derive(1, "bench", i++);
    benchmark::DoNotOptimize(make_sample(spec, img, rng).input.data.data());
  }
}

}  // namespace

BENCHMARK_CAPTURE(BM_degrade_op, masked, Task::masked);
BENCHMARK_CAPTURE(BM_degrade_op, zoomed_in, Task::zoomed_in);
BENCHMARK_CAPTURE(BM_degrade_op, zoomed_out, Task::zoomed_out);
BENCHMARK_CAPTURE(BM_degrade_op, distorted, Task::distorted);
BENCHMARK_CAPTURE(BM_degrade_op, blurred, Task::blurred);
BENCHMARK_CAPTURE(BM_degrade_op, decolorized, Task::decolorized);
BENCHMARK_CAPTURE(BM_degrade_op, shuffled, Task::shuffled);
BENCHMARK_CAPTURE(BM_degrade_op, wave, Task::wave_distorted);
BENCHMARK(BM_integrated);
