#include <benchmark/benchmark.h>

#include <numeric>

#include "vtpt/degrade.hpp"
#include "vtpt/objectives.hpp"
#include "vtpt/patch.hpp"
#include "vtpt/vit.hpp"

using namespace vtpt;

namespace {

Image random_image(int side, Rng& rng) {
  Image img = Image::zeros(side, side);
  for (float& v : img.data) v = static_cast<float>(rng.next_double());
  return img;
}

void BM_matmul_toy(benchmark::State& state) {
  Rng rng(1);
  int t = static_cast<int>(state.range(0));
  Tensor<float> a = Tensor<float>::randn({t, 96}, rng, 1.0f);
  Tensor<float> b = Tensor<float>::randn({96, 288}, rng, 1.0f);
  for (auto _ : state) {
    Tape<float> tape(false);
    benchmark::DoNotOptimize(tape.matmul(a, b).data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * t * 96 * 288);
}
BENCHMARK(BM_matmul_toy)->Arg(17)->Arg(65)->Arg(520);

void BM_encoder_forward(benchmark::State& state) {
  ViTConfig cfg = ViTConfig::toy_scale();
  Rng rng(2);
  ParamSet<float> params = init_params(cfg, rng);
  Rng img_rng(3);
  Image img = random_image(32, img_rng);
  PatchSequence seq = patchify(img, cfg.patch);
  std::vector<int> all(seq.count);
  std::iota(all.begin(), all.end(), 0);
  for (auto _ : state) {
    Tape<float> tape(false);
    EmbedInput<float> in = make_embed_input<float>({&seq}, {all});
    TokenBatch<float> tb = embed_tokens(tape, cfg, params, in);
    tb = encode(tape, cfg, params, tb);
    benchmark::DoNotOptimize(tb.tokens.data());
  }
}
BENCHMARK(BM_encoder_forward);

void BM_recovery_step(benchmark::State& state) {
  // One masked-sample forward+backward, the unit of pre-training work.
  ViTConfig cfg = ViTConfig::toy_scale();
  Rng rng(4);
  ParamSet<float> params = init_params(cfg, rng);
  Rng img_rng(5);
  Image img = random_image(32, img_rng);
  PatchSequence seq = patchify(img, cfg.patch);
  Rng mask_rng(6);
  std::vector<uint8_t> visible = mask_random(64, 0.75, mask_rng);
  std::vector<int> vis_idx;
  for (size_t i = 0; i < visible.size(); ++i)
    if (visible[i]) vis_idx.push_back(static_cast<int>(i));
  for (auto _ : state) {
    Tape<float> tape;
    EmbedInput<float> in = make_embed_input<float>({&seq}, {vis_idx});
    TokenBatch<float> tb = embed_tokens(tape, cfg, params, in);
    tb = encode(tape, cfg, params, tb);
    tb = insert_mask_tokens(tape, cfg, params, tb);
    Tensor<float> pred = decode(tape, cfg, params, tb);
    LossBreakdown<float> loss = recovery_loss(tape, pred, {&seq}, {visible}, true);
    tape.backward(loss.total);
    params.zero_grads();
    benchmark::DoNotOptimize(loss.total.data());
  }
}
BENCHMARK(BM_recovery_step);

}  // namespace

BENCHMARK_MAIN();
