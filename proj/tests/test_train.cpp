#include "doctest.h"
#include "vtpt/train.hpp"

#include <filesystem>
#include <fstream>

#include "test_util.hpp"
#include "vtpt/parallel.hpp"

using namespace vtpt;
namespace fs = std::filesystem;

namespace {

ViTConfig tiny_vit() {
  ViTConfig cfg = ViTConfig::toy_scale();
  cfg.depth = 2;
  cfg.dim = 32;
  cfg.heads = 2;
  cfg.decoder_depth = 1;
  cfg.decoder_dim = 16;
  cfg.decoder_heads = 2;
  return cfg;
}

DegradationSpec toy_spec(Task task) {
  DegradationSpec spec;
  spec.task = task;
  spec.patch = 4;
  spec.canvas_side = 32;
  spec.scale_s = 24;
  spec.kernel_size = 5;
  spec.aux_side = 44;
  return spec;
}

TrainConfig quick_train(int epochs, int batch) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch;
  t.base_lr = 1e-3;
  t.warmup_fraction = 0.1;
  t.checkpoint_every = 0;
  t.log_wall_time = false;
  return t;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

std::vector<float> param_bytes(const ParamSet<float>& p) {
  std::vector<float> all;
  for (const auto& [name, t] : p)
    all.insert(all.end(), t.values().begin(), t.values().end());
  return all;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("augment: identity setup, determinism, output side") {
  Image img = testutil::pattern_image(32);
  Rng r1(5);
  // Scale pinned to 1 with flips off: identity up to a center crop.
  Image same = augment(img, r1, 32, 1.0, 1.0, 0.0);
  CHECK(max_abs_diff(same, img) == 0.0f);

  Rng r2 = Rng::derive(7, "aug", 3);
  Rng r3 = Rng::derive(7, "aug", 3);
  Image a = augment(img, r2, 24);
  Image b = augment(img, r3, 24);
  CHECK(a.data == b.data);
  CHECK(a.height == 24);
  CHECK(a.width == 24);

  Rng r4(9);
  for (int i = 0; i < 20; ++i) {
    Image c = augment(img, r4, 32);
    CHECK(c.height == 32);
    CHECK(c.width == 32);
  }
}

TEST_CASE("pretrain: bookkeeping, empty dataset, loss decreases") {
  Dataset tiny = synth_dataset(8, 32, 21);
  ViTConfig vit = tiny_vit();
  DegradationSpec spec = toy_spec(Task::masked);
  Rng rng(1);
  ParamSet<float> params = init_params(vit, rng);
  AdamW opt(params, pretrain_trainable_names(params));
  RunContext ctx;
  ctx.seed = 1;
  TrainResult one = pretrain(ctx, vit, spec, quick_train(1, 4), tiny, params, opt);
  CHECK(one.epochs.size() == 1);  // exactly one epoch record
  CHECK(one.global_step == 2);

  Dataset empty;
  CHECK_THROWS_AS(pretrain(ctx, vit, spec, quick_train(1, 4), empty, params, opt),
                  std::invalid_argument);

  // A short run on a small set: training loss drops from the first epoch.
  Dataset small = synth_dataset(64, 32, 22);
  Rng rng2(2);
  ParamSet<float> p2 = init_params(vit, rng2);
  AdamW opt2(p2, pretrain_trainable_names(p2));
  TrainConfig tc = quick_train(12, 16);
  tc.base_lr = 2e-3;
  TrainResult run = pretrain(ctx, vit, spec, tc, small, p2, opt2);
  CHECK(run.epochs.back().loss_total < run.epochs.front().loss_total);
}

TEST_CASE("pretrain is bit-deterministic for any worker count") {
  Dataset data = synth_dataset(32, 32, 23);
  ViTConfig vit = tiny_vit();
  DegradationSpec spec = toy_spec(Task::zoomed_in);
  RunContext ctx;
  ctx.seed = 5;

  std::vector<float> snapshots[2];
  int threads[2] = {1, 2};
  for (int i = 0; i < 2; ++i) {
    set_worker_threads(threads[i]);
    Rng rng(3);
    ParamSet<float> params = init_params(vit, rng);
    AdamW opt(params, pretrain_trainable_names(params));
    pretrain(ctx, vit, spec, quick_train(2, 16), data, params, opt);
    snapshots[i] = param_bytes(params);
  }
  set_worker_threads(0);
  CHECK(snapshots[0] == snapshots[1]);
}

TEST_CASE("resume from checkpoint reproduces the uninterrupted run bitwise") {
  Dataset data = synth_dataset(24, 32, 24);
  ViTConfig vit = tiny_vit();
  DegradationSpec spec = toy_spec(Task::masked);
  std::string dir = testutil::scratch_dir("resume");

  auto fresh = [&](const std::string& out) {
    Rng rng(4);
    ParamSet<float> params = init_params(vit, rng);
    AdamW opt(params, pretrain_trainable_names(params));
    RunContext ctx;
    ctx.seed = 6;
    ctx.out_dir = out;
    ctx.run_id = "r";
    return std::make_tuple(std::move(params), std::move(opt), ctx);
  };

  // Uninterrupted: 4 epochs.
  auto [p_full, opt_full, ctx_full] = fresh(dir + "/full");
  fs::create_directories(dir + "/full");
  pretrain(ctx_full, vit, spec, quick_train(4, 8), data, p_full, opt_full);

  // Interrupted: 2 epochs, checkpoint, then resume for 2 more.
  auto [p_half, opt_half, ctx_half] = fresh(dir + "/half");
  fs::create_directories(dir + "/half");
  pretrain(ctx_half, vit, spec, quick_train(2, 8), data, p_half, opt_half);
  Checkpoint mid = Checkpoint::load(dir + "/half/checkpoint-final.vtpt");

  auto [p_res, opt_res, ctx_res] = fresh(dir + "/res");
  fs::create_directories(dir + "/res");
  restore_checkpoint(mid, p_res, &opt_res);
  int start = static_cast<int>(mid.meta_int("epoch", 0));
  CHECK(start == 2);
  pretrain(ctx_res, vit, spec, quick_train(4, 8), data, p_res, opt_res, start);

  CHECK(param_bytes(p_full) == param_bytes(p_res));
  // Final checkpoints agree byte for byte.
  CHECK(slurp(dir + "/full/checkpoint-final.vtpt") ==
        slurp(dir + "/res/checkpoint-final.vtpt"));
}

TEST_CASE("finetune: random init supported, exact accuracy, improvement") {
  Dataset train = synth_dataset(60, 32, 25);
  Dataset test = synth_dataset(30, 32, 26);
  ViTConfig vit = tiny_vit();
  Rng rng(7);
  ParamSet<float> params = init_params(vit, rng);  // the no-pretraining baseline
  AdamW opt(params, finetune_trainable_names(params));
  RunContext ctx;
  ctx.seed = 8;
  TrainConfig tc = quick_train(8, 16);
  tc.base_lr = 2e-3;
  tc.augment = false;
  TrainResult r = finetune(ctx, vit, tc, train, test, params, opt);
  CHECK(r.final_eval.total == 30);
  CHECK(r.final_eval.accuracy ==
        static_cast<double>(r.final_eval.correct) / r.final_eval.total);
  // Training loss improves over the run.
  CHECK(r.epochs.back().loss_total < r.epochs.front().loss_total);

  Dataset wide;
  wide.samples = train.samples;
  for (int c = 0; c < 20; ++c) wide.class_names.push_back("c" + std::to_string(c));
  CHECK_THROWS_AS(finetune(ctx, vit, tc, wide, test, params, opt),
                  std::invalid_argument);
}

TEST_CASE("probe: backbone untouched bitwise, linear and nonlinear run") {
  Dataset train = synth_dataset(40, 32, 27);
  Dataset test = synth_dataset(20, 32, 28);
  ViTConfig vit = tiny_vit();
  Rng rng(9);
  ParamSet<float> backbone = init_params(vit, rng);
  std::vector<float> before = param_bytes(backbone);

  RunContext ctx;
  ctx.seed = 10;
  TrainConfig tc = quick_train(5, 16);
  tc.augment = false;
  ProbeResult lin = probe(ctx, vit, tc, train, test, backbone, ProbeMode::linear);
  CHECK(param_bytes(backbone) == before);  // frozen, bit for bit
  CHECK(lin.train.final_eval.total == 20);

  tc.probe_blocks = 2;
  ProbeResult non = probe(ctx, vit, tc, train, test, backbone, ProbeMode::nonlinear);
  CHECK(param_bytes(backbone) == before);
  CHECK(non.head.contains("probe.01.qkv.w"));
  CHECK(non.train.final_eval.total == 20);
}

TEST_CASE("recover_image reports raw MSE and display-ready images") {
  ViTConfig vit = tiny_vit();
  Rng rng(11);
  ParamSet<float> params = init_params(vit, rng);
  DegradationSpec spec = toy_spec(Task::distorted);
  spec.twist_lo = spec.twist_hi = 0.2;
  Image img = testutil::pattern_image(32);
  Rng r(12);
  RecoverResult res = recover_image(vit, params, spec, img, r);
  CHECK(res.degraded.height == 32);
  CHECK(res.reconstruction.height == 32);
  CHECK(res.mse_raw >= 0.0);
  for (float v : res.reconstruction.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_SUITE_END();
