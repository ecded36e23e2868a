#pragma once

#include <map>
#include <string>
#include <vector>

#include "vtpt/tensor.hpp"

namespace vtpt {

struct AdamConfig {
  double lr = 1.5e-4;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
};

/// Decoupled-weight-decay Adam over a fixed set of parameter names. Decay is
/// skipped for vector parameters (biases, norm gains) and the class/mask
/// tokens; per-name learning-rate multipliers support layer-wise decay.
/// Moments are float tensors so they serialize like parameters.
class AdamW {
 public:
  AdamW() = default;
  /// Registers the trainable names (all requires_grad params when empty).
  AdamW(const ParamSet<float>& params, std::vector<std::string> trainable = {});

  /// Applies one update from the accumulated gradients, which must be finite;
  /// non-finite gradients abort with the offending parameter named.
  void step(ParamSet<float>& params, const AdamConfig& cfg,
            const std::map<std::string, double>* lr_scales = nullptr);

  int64_t step_count() const { return step_count_; }
  const std::vector<std::string>& trainable() const { return names_; }

  /// Checkpoint surface: moment buffers plus the step counter.
  std::map<std::string, Tensor<float>>& moments1() { return m_; }
  std::map<std::string, Tensor<float>>& moments2() { return v_; }
  void set_step_count(int64_t t) { step_count_ = t; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, Tensor<float>> m_, v_;
  int64_t step_count_ = 0;
};

/// Cosine annealing with linear warmup. Steps index [0, total). The last
/// warmup step reaches exactly base_lr; the final step reaches 0.
double cosine_lr(int64_t step, int64_t total_steps, double base_lr, double warmup_fraction);

/// Multiplier for one layer-wise decay group. layer -1 is the patch embedding
/// and class token, 0..depth-1 the encoder blocks, depth the head group.
double layer_scale(int layer, int depth, double rate);

/// Multipliers [embedding, block 0 .. block depth-1, head].
std::vector<double> layerwise_scales(int depth, double rate);

/// Per-name multiplier map for a parameter set.
std::map<std::string, double> layerwise_lr_scales(const ParamSet<float>& params, int depth,
                                                  double rate);

}  // namespace vtpt
