#include "vtpt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <stdexcept>

#include "vtpt/objectives.hpp"
#include "vtpt/parallel.hpp"
#include "vtpt/patch.hpp"

namespace vtpt {

namespace {

// Fixed scheduling unit: gradients reduce in chunk order, so results do not
// depend on the worker count.
constexpr int kChunkSamples = 8;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<int> epoch_order(size_t n, uint64_t seed, int epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(seed, "order", static_cast<uint64_t>(epoch));
  rng.shuffle(order);
  return order;
}

Rng sample_rng(uint64_t seed, int epoch, int slot) {
  return Rng::derive(seed, "sample",
                     (static_cast<uint64_t>(epoch) << 32) | static_cast<uint64_t>(slot));
}

Image fit_to_side(const Image& img, int side) {
  if (img.height == side && img.width == side) return img;
  return rescale_bilinear(img, side, side);
}

struct BatchGrads {
  ParamSet<float> shadow;
  double loss = 0.0, center = 0.0, outer = 0.0;
  int64_t samples = 0;
};

/// Adds every shadow gradient into the master set, chunk by chunk in order.
void reduce_grads(ParamSet<float>& params, std::vector<BatchGrads>& chunks) {
  for (auto& chunk : chunks)
    for (auto& [name, t] : chunk.shadow) {
      if (!t.grad_allocated()) continue;
      std::vector<float>& dst = params.at(name).grad();
      const std::vector<float>& src = t.grad();
      for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }
}

void write_epoch_metrics(const RunContext& ctx, const std::string& phase, int epoch,
                         int64_t step, double lr, const EpochStats& stats, double wall_ms) {
  if (ctx.metrics == nullptr) return;
  MetricsRecord r;
  r.run_id = ctx.run_id;
  r.phase = phase;
  r.epoch = epoch;
  r.step = step;
  r.lr = lr;
  r.loss_total = stats.loss_total;
  r.loss_center = stats.loss_center;
  r.loss_outer = stats.loss_outer;
  r.acc_top1 = stats.acc_top1;
  r.wall_ms = ctx.log_wall_time ? wall_ms : 0.0;
  r.seed = ctx.seed;
  ctx.metrics->append(r);
}

void save_snapshot(const RunContext& ctx, const ParamSet<float>& params, const AdamW& opt,
                   const std::string& phase, int epoch, int64_t step, bool cadence_hit,
                   bool final) {
  if (ctx.out_dir.empty()) return;
  Checkpoint ckpt = make_checkpoint(ctx, params, &opt, phase, epoch, step);
  if (cadence_hit)
    ckpt.save(ctx.out_dir + "/checkpoint-epoch" + std::to_string(epoch) + ".vtpt");
  if (final) ckpt.save(ctx.out_dir + "/checkpoint-final.vtpt");
}

/// Recovery forward for one sample; returns the batch loss breakdown.
LossBreakdown<float> recovery_forward(Tape<float>& tape, const ViTConfig& vit,
                                      const DegradationSpec& spec,
                                      const ParamSet<float>& params, const DegradedSample& ds) {
  PatchSequence input_seq = patchify(ds.input, vit.patch);
  PatchSequence target_seq = patchify(ds.target, vit.patch);
  std::vector<int> vis_idx;
  for (size_t i = 0; i < ds.visible.size(); ++i)
    if (ds.visible[i]) vis_idx.push_back(static_cast<int>(i));
  EmbedInput<float> in = make_embed_input<float>({&input_seq}, {vis_idx});
  TokenBatch<float> tb = embed_tokens(tape, vit, params, in);
  tb = encode(tape, vit, params, tb);
  tb = insert_mask_tokens(tape, vit, params, tb);
  Tensor<float> pred = decode(tape, vit, params, tb);
  std::vector<std::vector<uint8_t>> visible = {ds.visible};
  std::vector<const PatchSequence*> targets = {&target_seq};
  if (spec.task == Task::integrated) {
    std::vector<const Image*> aux = {&*ds.aux};
    return integrated_loss(tape, pred, targets, visible, aux, vit.patch, spec.outer_weight);
  }
  return recovery_loss(tape, pred, targets, visible, spec.normalized_targets);
}

Tensor<float> class_logits(Tape<float>& tape, const ViTConfig& vit,
                           const ParamSet<float>& params, const Image& img) {
  PatchSequence seq = patchify(img, vit.patch);
  std::vector<int> all(seq.count);
  std::iota(all.begin(), all.end(), 0);
  EmbedInput<float> in = make_embed_input<float>({&seq}, {all});
  TokenBatch<float> tb = embed_tokens(tape, vit, params, in);
  tb = encode(tape, vit, params, tb);
  return classify_linear(tape, vit, params, tb);
}

int argmax_row(const Tensor<float>& logits) {
  int best = 0;
  for (int j = 1; j < logits.cols(); ++j)
    if (logits.data()[j] > logits.data()[best]) best = j;
  return best;
}

}  // namespace

Image augment(const Image& img, Rng& rng, int out_side, double scale_lo, double scale_hi,
              double flip_prob) {
  int h = img.height, w = img.width;
  double area = static_cast<double>(h) * w;
  Image out;
  bool cropped = false;
  for (int attempt = 0; attempt < 10 && !cropped; ++attempt) {
    double target = rng.uniform(scale_lo, scale_hi) * area;
    double ratio = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    int cw = static_cast<int>(std::lround(std::sqrt(target * ratio)));
    int ch = static_cast<int>(std::lround(std::sqrt(target / ratio)));
    if (cw >= 1 && ch >= 1 && cw <= w && ch <= h) {
      int y0 = static_cast<int>(rng.next_below(static_cast<uint64_t>(h - ch + 1)));
      int x0 = static_cast<int>(rng.next_below(static_cast<uint64_t>(w - cw + 1)));
      out = rescale_bilinear(img, CropRect{y0, x0, ch, cw}, out_side, out_side);
      cropped = true;
    }
  }
  if (!cropped) {
    int side = std::min(h, w);
    out = rescale_bilinear(img, CropRect{(h - side) / 2, (w - side) / 2, side, side}, out_side,
                           out_side);
  }
  if (rng.next_double() < flip_prob) flip_horizontal(out);
  return out;
}

std::vector<std::string> pretrain_trainable_names(const ParamSet<float>& params) {
  std::vector<std::string> names;
  for (const auto& [name, t] : params)
    if (t.requires_grad() && name.rfind("head.", 0) != 0) names.push_back(name);
  return names;
}

std::vector<std::string> finetune_trainable_names(const ParamSet<float>& params) {
  std::vector<std::string> names;
  for (const auto& [name, t] : params)
    if (t.requires_grad() && name.rfind("dec.", 0) != 0 && name != "mask_token")
      names.push_back(name);
  return names;
}

Checkpoint make_checkpoint(const RunContext& ctx, const ParamSet<float>& params,
                           const AdamW* opt, const std::string& phase, int64_t epoch,
                           int64_t step) {
  Checkpoint ckpt;
  if (ctx.resolved_config != nullptr) {
    for (const auto& key : RunConfig::known_keys())
      if (ctx.resolved_config->has(key)) ckpt.config[key] = ctx.resolved_config->gets(key);
  }
  ckpt.meta["phase"] = phase;
  ckpt.meta["epoch"] = std::to_string(epoch);
  ckpt.meta["step"] = std::to_string(step);
  ckpt.meta["run_id"] = ctx.run_id;
  ckpt.meta["seed"] = std::to_string(ctx.seed);
  for (const auto& [name, t] : params) ckpt.tensors.add(name, t);
  if (opt != nullptr) {
    AdamW& o = *const_cast<AdamW*>(opt);
    for (auto& [name, t] : o.moments1()) ckpt.tensors.add("opt.m/" + name, t);
    for (auto& [name, t] : o.moments2()) ckpt.tensors.add("opt.v/" + name, t);
    ckpt.meta["opt.step"] = std::to_string(opt->step_count());
  }
  return ckpt;
}

void restore_checkpoint(const Checkpoint& ckpt, ParamSet<float>& params, AdamW* opt) {
  for (auto& [name, t] : params) {
    if (!ckpt.tensors.contains(name))
      throw std::runtime_error("checkpoint restore: missing tensor " + name);
    const Tensor<float>& src = ckpt.tensors.at(name);
    if (src.shape() != t.shape())
      throw std::runtime_error("checkpoint restore: shape mismatch for " + name + " (" +
                               shape_str(src.shape()) + " vs " + shape_str(t.shape()) + ")");
    std::copy_n(src.data(), src.numel(), t.data());
  }
  if (opt != nullptr) {
    for (auto& [name, t] : opt->moments1()) {
      std::string key = "opt.m/" + name;
      if (ckpt.tensors.contains(key)) std::copy_n(ckpt.tensors.at(key).data(), t.numel(), t.data());
    }
    for (auto& [name, t] : opt->moments2()) {
      std::string key = "opt.v/" + name;
      if (ckpt.tensors.contains(key)) std::copy_n(ckpt.tensors.at(key).data(), t.numel(), t.data());
    }
    opt->set_step_count(ckpt.meta_int("opt.step", 0));
  }
}

TrainResult pretrain(const RunContext& ctx, const ViTConfig& vit, const DegradationSpec& spec,
                     const TrainConfig& tcfg, const Dataset& train, ParamSet<float>& params,
                     AdamW& opt, int start_epoch) {
  if (train.samples.empty()) throw std::invalid_argument("pretrain: dataset is empty");
  if (tcfg.threads > 0) set_worker_threads(tcfg.threads);
  spec.validate();
  vit.validate();

  int n = static_cast<int>(train.samples.size());
  int64_t steps_per_epoch = (n + tcfg.batch_size - 1) / tcfg.batch_size;
  int64_t total_steps = steps_per_epoch * tcfg.epochs;
  int source_side = spec.task == Task::integrated ? spec.aux_side : vit.image_side;

  TrainResult result;
  result.global_step = start_epoch * steps_per_epoch;
  for (int epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
    auto t0 = Clock::now();
    std::vector<int> order = epoch_order(train.samples.size(), ctx.seed, epoch);
    double epoch_loss = 0.0, epoch_center = 0.0, epoch_outer = 0.0;
    double last_lr = 0.0;

    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      int begin = static_cast<int>(s) * tcfg.batch_size;
      int count = std::min(tcfg.batch_size, n - begin);
      int chunks = (count + kChunkSamples - 1) / kChunkSamples;
      std::vector<BatchGrads> grads(chunks);

      parallel_chunks(chunks, [&](int ci) {
        BatchGrads& out = grads[ci];
        out.shadow = params.shadow();
        for (int k = ci * kChunkSamples; k < std::min((ci + 1) * kChunkSamples, count); ++k) {
          int slot = begin + k;
          Rng rng = sample_rng(ctx.seed, epoch, slot);
          const Image& raw = train.samples[order[slot]].image;
          Image img = tcfg.augment ? augment(raw, rng, source_side)
                                   : fit_to_side(raw, source_side);
          const Image* other = nullptr;
          Image other_img;
          if (spec.task == Task::zoomed_out && spec.pad_mode == PadMode::other_image) {
            // Same-batch neighbour, un-augmented, fitted to the canvas.
            int next = order[(slot + 1 - begin) % count + begin];
            other_img = fit_to_side(train.samples[next].image, source_side);
            other = &other_img;
          }
          DegradedSample ds = make_sample(spec, img, rng, other);
          Tape<float> tape;
          LossBreakdown<float> loss = recovery_forward(tape, vit, spec, out.shadow, ds);
          Tensor<float> scaled = tape.scale(loss.total, 1.0f / static_cast<float>(count));
          tape.backward(scaled);
          out.loss += loss.total_value();
          out.center += loss.center_value();
          out.outer += loss.outer_value();
          out.samples += 1;
        }
      });

      double batch_loss = 0.0;
      for (auto& g : grads) {
        batch_loss += g.loss;
        epoch_loss += g.loss;
        epoch_center += g.center;
        epoch_outer += g.outer;
      }
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("pretrain: non-finite loss at epoch " + std::to_string(epoch) +
                                 " step " + std::to_string(s) +
                                 "; last checkpoint retained");
      reduce_grads(params, grads);

      last_lr = cosine_lr(result.global_step, total_steps, tcfg.base_lr, tcfg.warmup_fraction);
      AdamConfig acfg;
      acfg.lr = last_lr;
      acfg.weight_decay = tcfg.weight_decay;
      acfg.beta1 = tcfg.beta1;
      acfg.beta2 = tcfg.beta2;
      opt.step(params, acfg);
      params.zero_grads();
      ++result.global_step;
    }

    EpochStats stats;
    stats.loss_total = epoch_loss / n;
    stats.loss_center = epoch_center / n;
    stats.loss_outer = epoch_outer / n;
    result.epochs.push_back(stats);
    write_epoch_metrics(ctx, "pretrain", epoch, result.global_step, last_lr, stats,
                        elapsed_ms(t0));
    bool cadence = tcfg.checkpoint_every > 0 && (epoch + 1) % tcfg.checkpoint_every == 0;
    save_snapshot(ctx, params, opt, "pretrain", epoch + 1, result.global_step, cadence,
                  epoch + 1 == tcfg.epochs);
  }
  return result;
}

EvalResult evaluate(const ViTConfig& vit, const ParamSet<float>& params, const Dataset& test) {
  EvalResult r;
  r.total = static_cast<int64_t>(test.samples.size());
  if (r.total == 0) return r;
  int chunks = (static_cast<int>(r.total) + kChunkSamples - 1) / kChunkSamples;
  std::vector<int64_t> correct(chunks, 0);
  parallel_chunks(chunks, [&](int ci) {
    for (int i = ci * kChunkSamples;
         i < std::min<int>((ci + 1) * kChunkSamples, static_cast<int>(r.total)); ++i) {
      Tape<float> tape(false);
      Image img = fit_to_side(test.samples[i].image, vit.image_side);
      Tensor<float> logits = class_logits(tape, vit, params, img);
      if (argmax_row(logits) == test.samples[i].label) ++correct[ci];
    }
  });
  for (int64_t c : correct) r.correct += c;
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

TrainResult finetune(const RunContext& ctx, const ViTConfig& vit, const TrainConfig& tcfg,
                     const Dataset& train, const Dataset& test, ParamSet<float>& params,
                     AdamW& opt, int start_epoch) {
  if (train.samples.empty()) throw std::invalid_argument("finetune: dataset is empty");
  if (train.class_count() > vit.classes)
    throw std::invalid_argument("finetune: dataset has " +
                                std::to_string(train.class_count()) +
                                " classes but the head has " + std::to_string(vit.classes));
  if (tcfg.threads > 0) set_worker_threads(tcfg.threads);

  int n = static_cast<int>(train.samples.size());
  int64_t steps_per_epoch = (n + tcfg.batch_size - 1) / tcfg.batch_size;
  int64_t total_steps = steps_per_epoch * tcfg.epochs;
  std::map<std::string, double> scales =
      layerwise_lr_scales(params, vit.depth, tcfg.layerwise_decay);

  TrainResult result;
  result.global_step = start_epoch * steps_per_epoch;
  for (int epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
    auto t0 = Clock::now();
    std::vector<int> order = epoch_order(train.samples.size(), ctx.seed, epoch);
    double epoch_loss = 0.0;
    double last_lr = 0.0;

    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      int begin = static_cast<int>(s) * tcfg.batch_size;
      int count = std::min(tcfg.batch_size, n - begin);
      int chunks = (count + kChunkSamples - 1) / kChunkSamples;
      std::vector<BatchGrads> grads(chunks);
      parallel_chunks(chunks, [&](int ci) {
        BatchGrads& out = grads[ci];
        out.shadow = params.shadow();
        for (int k = ci * kChunkSamples; k < std::min((ci + 1) * kChunkSamples, count); ++k) {
          int slot = begin + k;
          Rng rng = sample_rng(ctx.seed, epoch, slot);
          const Sample& sample = train.samples[order[slot]];
          Image img = tcfg.augment ? augment(sample.image, rng, vit.image_side)
                                   : fit_to_side(sample.image, vit.image_side);
          Tape<float> tape;
          Tensor<float> logits = class_logits(tape, vit, out.shadow, img);
          Tensor<float> loss = tape.cross_entropy(logits, {sample.label});
          Tensor<float> scaled = tape.scale(loss, 1.0f / static_cast<float>(count));
          tape.backward(scaled);
          out.loss += static_cast<double>(loss.item());
        }
      });
      double batch_loss = 0.0;
      for (auto& g : grads) {
        batch_loss += g.loss;
        epoch_loss += g.loss;
      }
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("finetune: non-finite loss at epoch " + std::to_string(epoch));
      reduce_grads(params, grads);
      last_lr = cosine_lr(result.global_step, total_steps, tcfg.base_lr, tcfg.warmup_fraction);
      AdamConfig acfg;
      acfg.lr = last_lr;
      acfg.weight_decay = tcfg.weight_decay;
      acfg.beta1 = tcfg.beta1;
      acfg.beta2 = tcfg.beta2;
      opt.step(params, acfg, &scales);
      params.zero_grads();
      ++result.global_step;
    }

    EpochStats stats;
    stats.loss_total = epoch_loss / n;
    stats.loss_center = stats.loss_total;
    bool eval_now = !test.samples.empty() &&
                    (tcfg.eval_every > 0 && ((epoch + 1) % tcfg.eval_every == 0 ||
                                             epoch + 1 == tcfg.epochs));
    if (eval_now) {
      result.final_eval = evaluate(vit, params, test);
      stats.acc_top1 = result.final_eval.accuracy;
    }
    result.epochs.push_back(stats);
    write_epoch_metrics(ctx, "finetune", epoch, result.global_step, last_lr, stats,
                        elapsed_ms(t0));
    bool cadence = tcfg.checkpoint_every > 0 && (epoch + 1) % tcfg.checkpoint_every == 0;
    save_snapshot(ctx, params, opt, "finetune", epoch + 1, result.global_step, cadence,
                  epoch + 1 == tcfg.epochs);
  }
  return result;
}

namespace {

/// Frozen-backbone encoder pass over a dataset; rows are class-token features
/// (linear mode) or full token sequences (nonlinear mode).
std::vector<Tensor<float>> cache_features(const ViTConfig& vit, const ParamSet<float>& backbone,
                                          const Dataset& ds, bool full_tokens) {
  std::vector<Tensor<float>> cache(ds.samples.size());
  int chunks = (static_cast<int>(ds.samples.size()) + kChunkSamples - 1) / kChunkSamples;
  parallel_chunks(chunks, [&](int ci) {
    for (int i = ci * kChunkSamples;
         i < std::min<int>((ci + 1) * kChunkSamples, static_cast<int>(ds.samples.size())); ++i) {
      Tape<float> tape(false);
      Image img = fit_to_side(ds.samples[i].image, vit.image_side);
      PatchSequence seq = patchify(img, vit.patch);
      std::vector<int> all(seq.count);
      std::iota(all.begin(), all.end(), 0);
      EmbedInput<float> in = make_embed_input<float>({&seq}, {all});
      TokenBatch<float> tb = embed_tokens(tape, vit, backbone, in);
      tb = encode(tape, vit, backbone, tb);
      if (full_tokens) {
        cache[i] = tb.tokens;
      } else {
        cache[i] = tape.gather_rows(tb.tokens, {0});
      }
    }
  });
  return cache;
}

Tensor<float> stack_rows(const std::vector<Tensor<float>>& cache, const std::vector<int>& idx) {
  int rows_per = cache[0].rows();
  int c = cache[0].cols();
  Tensor<float> out = Tensor<float>::zeros({static_cast<int>(idx.size()) * rows_per, c});
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(cache[idx[i]].data(), static_cast<int64_t>(rows_per) * c,
                out.data() + static_cast<int64_t>(i) * rows_per * c);
  return out;
}

}  // namespace

ProbeResult probe(const RunContext& ctx, const ViTConfig& vit, const TrainConfig& tcfg,
                  const Dataset& train, const Dataset& test, const ParamSet<float>& backbone,
                  ProbeMode mode) {
  if (train.samples.empty()) throw std::invalid_argument("probe: dataset is empty");
  if (tcfg.threads > 0) set_worker_threads(tcfg.threads);
  bool nonlinear = mode == ProbeMode::nonlinear;
  if (nonlinear && tcfg.probe_blocks < 1)
    throw std::invalid_argument("probe: nonlinear mode needs probe_blocks >= 1");

  // Backbone stays frozen and untouched; probes train their own parameters.
  Rng init_rng = Rng::derive(ctx.seed, "probe-init", nonlinear ? 1 : 0);
  ParamSet<float> head;
  if (nonlinear) {
    head = init_probe_params(vit, tcfg.probe_blocks, init_rng);
  } else {
    head.add("head.w", Tensor<float>::randn({vit.dim, vit.classes}, init_rng, 0.02f, true));
    head.add("head.b", Tensor<float>::zeros({vit.classes}, true));
  }

  std::vector<Tensor<float>> train_cache = cache_features(vit, backbone, train, nonlinear);
  std::vector<Tensor<float>> test_cache = cache_features(vit, backbone, test, nonlinear);
  int tokens_per = train_cache[0].rows();

  auto forward = [&](Tape<float>& tape, const ParamSet<float>& p, const Tensor<float>& rows,
                     int batch) {
    if (nonlinear) {
      TokenBatch<float> tb;
      tb.tokens = rows;
      tb.batch = batch;
      tb.tokens_per_sample = tokens_per;
      tb.has_cls = true;
      tb.grid_rows = vit.grid();
      tb.grid_cols = vit.grid();
      return probe_nonlinear(tape, vit, p, tb, tcfg.probe_blocks);
    }
    return tape.linear(rows, p.at("head.w"), p.at("head.b"));
  };

  int n = static_cast<int>(train.samples.size());
  int64_t steps_per_epoch = (n + tcfg.batch_size - 1) / tcfg.batch_size;
  int64_t total_steps = steps_per_epoch * tcfg.epochs;
  AdamW opt(head);

  ProbeResult result;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    auto t0 = Clock::now();
    std::vector<int> order = epoch_order(train.samples.size(), ctx.seed, epoch);
    double epoch_loss = 0.0, last_lr = 0.0;
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      int begin = static_cast<int>(s) * tcfg.batch_size;
      int count = std::min(tcfg.batch_size, n - begin);
      std::vector<int> idx(order.begin() + begin, order.begin() + begin + count);
      std::vector<int> labels(count);
      for (int i = 0; i < count; ++i) labels[i] = train.samples[idx[i]].label;
      Tape<float> tape;
      Tensor<float> rows = stack_rows(train_cache, idx);
      Tensor<float> logits = forward(tape, head, rows, count);
      Tensor<float> loss = tape.cross_entropy(logits, labels);
      tape.backward(loss);
      epoch_loss += static_cast<double>(loss.item()) * count;
      if (!std::isfinite(epoch_loss))
        throw std::runtime_error("probe: non-finite loss at epoch " + std::to_string(epoch));
      last_lr = cosine_lr(result.train.global_step, total_steps, tcfg.base_lr,
                          tcfg.warmup_fraction);
      AdamConfig acfg;
      acfg.lr = last_lr;
      acfg.weight_decay = tcfg.weight_decay;
      acfg.beta1 = tcfg.beta1;
      acfg.beta2 = tcfg.beta2;
      opt.step(head, acfg);
      head.zero_grads();
      ++result.train.global_step;
    }

    EpochStats stats;
    stats.loss_total = epoch_loss / n;
    stats.loss_center = stats.loss_total;
    bool eval_now = !test.samples.empty() &&
                    (tcfg.eval_every > 0 && ((epoch + 1) % tcfg.eval_every == 0 ||
                                             epoch + 1 == tcfg.epochs));
    if (eval_now) {
      EvalResult ev;
      ev.total = static_cast<int64_t>(test.samples.size());
      for (size_t i = 0; i < test_cache.size(); ++i) {
        Tape<float> tape(false);
        Tensor<float> logits = forward(tape, head, test_cache[i], 1);
        if (argmax_row(logits) == test.samples[i].label) ++ev.correct;
      }
      ev.accuracy = static_cast<double>(ev.correct) / static_cast<double>(ev.total);
      result.train.final_eval = ev;
      stats.acc_top1 = ev.accuracy;
    }
    result.train.epochs.push_back(stats);
    write_epoch_metrics(ctx, "probe", epoch, result.train.global_step, last_lr, stats,
                        elapsed_ms(t0));
  }
  if (!ctx.out_dir.empty()) {
    Checkpoint ckpt = make_checkpoint(ctx, head, nullptr, "probe", tcfg.epochs,
                                      result.train.global_step);
    ckpt.save(ctx.out_dir + "/probe-head.vtpt");
  }
  result.head = std::move(head);
  return result;
}

RecoverResult recover_image(const ViTConfig& vit, const ParamSet<float>& params,
                            const DegradationSpec& spec, const Image& img, Rng& rng) {
  Image fitted = fit_to_side(img, spec.task == Task::integrated ? spec.aux_side
                                                                : vit.image_side);
  DegradedSample ds = make_sample(spec, fitted, rng);
  Tape<float> tape(false);
  PatchSequence input_seq = patchify(ds.input, vit.patch);
  PatchSequence target_seq = patchify(ds.target, vit.patch);
  std::vector<int> vis_idx;
  for (size_t i = 0; i < ds.visible.size(); ++i)
    if (ds.visible[i]) vis_idx.push_back(static_cast<int>(i));
  EmbedInput<float> in = make_embed_input<float>({&input_seq}, {vis_idx});
  TokenBatch<float> tb = embed_tokens(tape, vit, params, in);
  tb = encode(tape, vit, params, tb);
  tb = insert_mask_tokens(tape, vit, params, tb);
  Tensor<float> pred = decode(tape, vit, params, tb);

  PatchSequence pred_seq = target_seq;  // geometry template
  std::copy_n(pred.data(), pred.numel(), pred_seq.data.data());
  bool normalized = spec.task == Task::integrated || spec.normalized_targets;
  if (normalized) {
    auto [norm, stats] = normalize_targets(target_seq);
    pred_seq = denormalize_targets(pred_seq, stats);
  }
  RecoverResult out;
  out.reconstruction = unpatchify(pred_seq);
  clamp01(out.reconstruction);
  out.degraded = ds.input;
  out.visible = ds.visible;
  double err = 0.0;
  for (size_t i = 0; i < out.reconstruction.data.size(); ++i) {
    double d = out.reconstruction.data[i] - ds.target.data[i];
    err += d * d;
  }
  out.mse_raw = err / static_cast<double>(out.reconstruction.data.size());
  return out;
}

}  // namespace vtpt
