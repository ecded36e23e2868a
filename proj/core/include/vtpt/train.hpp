#pragma once

#include <string>
#include <vector>

#include "vtpt/checkpoint.hpp"
#include "vtpt/config.hpp"
#include "vtpt/dataset.hpp"
#include "vtpt/degrade.hpp"
#include "vtpt/metrics.hpp"
#include "vtpt/optim.hpp"
#include "vtpt/vit.hpp"

namespace vtpt {

/// Random resized crop (area fraction in [scale_lo, scale_hi], aspect in
/// [3/4, 4/3], bilinear) to out_side, then horizontal flip with flip_prob.
/// Falls back to a center crop when ten aspect draws do not fit.
Image augment(const Image& img, Rng& rng, int out_side, double scale_lo = 0.2,
              double scale_hi = 1.0, double flip_prob = 0.5);

/// Output plumbing shared by the drivers. With an empty out_dir nothing is
/// written; with a null metrics pointer nothing is logged.
struct RunContext {
  std::string out_dir;
  MetricsWriter* metrics = nullptr;
  const RunConfig* resolved_config = nullptr;  // echoed into checkpoints
  std::string run_id;
  uint64_t seed = 0;
  bool log_wall_time = true;
};

struct EpochStats {
  double loss_total = 0.0;
  double loss_center = 0.0;
  double loss_outer = 0.0;
  double acc_top1 = -1.0;
};

struct EvalResult {
  int64_t correct = 0;
  int64_t total = 0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> epochs;
  int64_t global_step = 0;
  EvalResult final_eval;
};

/// Self-supervised recovery training. Deterministic given (seed, config) for
/// any worker count: per-sample randomness derives from (seed, epoch, slot)
/// and gradient reduction runs in fixed chunk order. Empty datasets and
/// non-finite losses abort (previously written checkpoints are retained).
TrainResult pretrain(const RunContext& ctx, const ViTConfig& vit, const DegradationSpec& spec,
                     const TrainConfig& tcfg, const Dataset& train, ParamSet<float>& params,
                     AdamW& opt, int start_epoch = 0);

/// Supervised training of every backbone parameter plus the classifier head
/// with layer-wise learning-rate decay; reports top-1 accuracy on test.
TrainResult finetune(const RunContext& ctx, const ViTConfig& vit, const TrainConfig& tcfg,
                     const Dataset& train, const Dataset& test, ParamSet<float>& params,
                     AdamW& opt, int start_epoch = 0);

enum class ProbeMode { linear, nonlinear };

struct ProbeResult {
  TrainResult train;
  ParamSet<float> head;  // trained probe parameters (head, plus blocks if any)
};

/// Frozen-backbone evaluation: encoder features are cached once (no
/// augmentation), then a fresh linear head — plus probe_blocks inserted
/// transformer blocks in nonlinear mode — is trained on them. The backbone
/// parameter set is never touched.
ProbeResult probe(const RunContext& ctx, const ViTConfig& vit, const TrainConfig& tcfg,
                  const Dataset& train, const Dataset& test, const ParamSet<float>& backbone,
                  ProbeMode mode);

/// Top-1 accuracy of the class-token classifier on a labelled dataset.
EvalResult evaluate(const ViTConfig& vit, const ParamSet<float>& params, const Dataset& test);

struct RecoverResult {
  Image degraded;
  Image reconstruction;  // de-normalized for display when targets were normalized
  std::vector<uint8_t> visible;
  double mse_raw = 0.0;  // raw-pixel MSE against the clean source
};

/// Degrades one clean image per the spec and reconstructs it with the model.
RecoverResult recover_image(const ViTConfig& vit, const ParamSet<float>& params,
                            const DegradationSpec& spec, const Image& img, Rng& rng);

/// Parameters updated during pre-training (everything but the classifier) and
/// fine-tuning (everything but the discarded decoder and mask token).
std::vector<std::string> pretrain_trainable_names(const ParamSet<float>& params);
std::vector<std::string> finetune_trainable_names(const ParamSet<float>& params);

// ---- checkpoint plumbing ----

Checkpoint make_checkpoint(const RunContext& ctx, const ParamSet<float>& params,
                           const AdamW* opt, const std::string& phase, int64_t epoch,
                           int64_t step);

/// Restores parameter values (shapes must match) and, when present and
/// requested, optimizer moments and the step counter.
void restore_checkpoint(const Checkpoint& ckpt, ParamSet<float>& params, AdamW* opt);

}  // namespace vtpt
