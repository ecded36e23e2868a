#pragma once

#include <string>
#include <vector>

#include "vtpt/patch.hpp"
#include "vtpt/tensor.hpp"

namespace vtpt {

struct ViTConfig {
  int patch = 16;
  int image_side = 224;
  int depth = 12;
  int dim = 768;
  int heads = 12;
  int decoder_depth = 4;
  int decoder_dim = 384;
  int decoder_heads = 8;
  int mlp_ratio = 4;
  int classes = 1000;
  double dropout = 0.0;
  double drop_path = 0.0;

  static ViTConfig paper_scale();
  static ViTConfig toy_scale();

  int grid() const { return image_side / patch; }
  int tokens() const { return grid() * grid(); }
  int patch_values() const { return 3 * patch * patch; }
  void validate() const;
};

/// Learnable parameters for the full encoder-decoder plus classifier head.
ParamSet<float> init_params(const ViTConfig& cfg, Rng& rng);

/// k probe blocks (encoder width, residual branches zero-initialised so the
/// stack starts as the identity) plus a fresh linear head.
ParamSet<float> init_probe_params(const ViTConfig& cfg, int blocks, Rng& rng);

/// Closed-form element count of init_params(cfg).
int64_t param_count(const ViTConfig& cfg);
int64_t probe_param_count(const ViTConfig& cfg, int blocks);

/// Parameter grouping used by the optimizer: weight decay skips vectors and
/// the class/mask tokens; layer-wise learning-rate scales resolve by group.
bool decay_param(const std::string& name, const Shape& shape);
/// Encoder block index for enc.NN.* names, -1 for embed/cls, or depth for
/// head-level parameters (head, final norm, decoder, probe).
int param_layer(const std::string& name, int depth);

/// Batch of token activations flattened to [batch*tokens_per_sample, width].
/// visible lists the original grid slot of each patch token per sample, in
/// token order. When has_cls, row 0 of each sample block is the class token.
template <typename S>
struct TokenBatch {
  Tensor<S> tokens;
  int batch = 0;
  int tokens_per_sample = 0;
  std::vector<std::vector<int>> visible;
  bool has_cls = true;
  int grid_rows = 0;
  int grid_cols = 0;
};

/// Patch rows gathered for embedding: one sample's visible patches after the
/// other, each row 3*P*P wide. Built from float patch sequences.
template <typename S>
struct EmbedInput {
  Tensor<S> patches;  // [batch*visible_count, 3*P*P], constant
  std::vector<std::vector<int>> visible;
  int grid_rows = 0;
  int grid_cols = 0;
};

/// All samples must expose the same visible count (uniform token geometry).
template <typename S>
EmbedInput<S> make_embed_input(const std::vector<const PatchSequence*>& seqs,
                               const std::vector<std::vector<int>>& visible);

/// Per-forward stochastic state (dropout, drop-path). Inactive at the default
/// zero rates, which keeps evaluation deterministic.
struct ForwardRng {
  Rng* rng = nullptr;
};

/// Projects visible patches to tokens, adds the fixed position embedding of
/// each token's original grid slot, and prepends the class token. Masked
/// patches are absent from the result entirely.
template <typename S>
TokenBatch<S> embed_tokens(Tape<S>& tape, const ViTConfig& cfg, const ParamSet<S>& params,
                           const EmbedInput<S>& input, bool use_pos = true);

/// L pre-norm transformer blocks plus the final norm; shape-preserving.
template <typename S>
TokenBatch<S> encode(Tape<S>& tape, const ViTConfig& cfg, const ParamSet<S>& params,
                     const TokenBatch<S>& tb, ForwardRng frng = {});

/// Restores grid order and fills every masked slot with the learned mask
/// token plus that slot's position embedding; tokens_per_sample becomes 1+M.
template <typename S>
TokenBatch<S> insert_mask_tokens(Tape<S>& tape, const ViTConfig& cfg,
                                 const ParamSet<S>& params, const TokenBatch<S>& tb);

/// Decoder: width projection, L_d blocks, norm, linear head to pixel values.
/// Returns per-patch predictions [batch*M, 3*P*P]; the class token is dropped.
template <typename S>
Tensor<S> decode(Tape<S>& tape, const ViTConfig& cfg, const ParamSet<S>& params,
                 const TokenBatch<S>& tb, ForwardRng frng = {});

/// Single linear layer on the class-token feature; [batch, classes].
template <typename S>
Tensor<S> classify_linear(Tape<S>& tape, const ViTConfig& cfg, const ParamSet<S>& params,
                          const TokenBatch<S>& tb);

/// k fresh transformer blocks over (frozen) encoder output, then the linear
/// head from probe_params. blocks must be >= 1.
template <typename S>
Tensor<S> probe_nonlinear(Tape<S>& tape, const ViTConfig& cfg,
                          const ParamSet<S>& probe_params, const TokenBatch<S>& tb,
                          int blocks, ForwardRng frng = {});

}  // namespace vtpt
