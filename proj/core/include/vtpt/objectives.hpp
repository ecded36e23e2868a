#pragma once

#include <vector>

#include "vtpt/degrade.hpp"
#include "vtpt/patch.hpp"
#include "vtpt/tensor.hpp"

namespace vtpt {

/// Scalar loss terms for one batch. total and center always exist; outer is
/// defined only for the integrated objective with a non-zero outer weight
/// (with weight zero, total IS the center tensor, bit for bit).
template <typename S>
struct LossBreakdown {
  Tensor<S> total;
  Tensor<S> center;
  Tensor<S> outer;
  int64_t selected_tokens = 0;

  double total_value() const { return static_cast<double>(total.item()); }
  double center_value() const { return static_cast<double>(center.item()); }
  double outer_value() const { return outer.defined() ? static_cast<double>(outer.item()) : 0.0; }
};

/// MSE between per-patch predictions [batch*M, 3*P*P] and the batch targets.
/// When any token is masked the mean runs over masked tokens only (their
/// gradients are exactly zero elsewhere); otherwise over all tokens. With
/// normalized set, targets are per-patch standardized first.
template <typename S>
LossBreakdown<S> recovery_loss(Tape<S>& tape, const Tensor<S>& pred,
                               const std::vector<const PatchSequence*>& targets,
                               const std::vector<std::vector<uint8_t>>& visible,
                               bool normalized);

/// Dual objective: normalized masked-recovery on the canvas plus raw-pixel
/// MSE between the area-resized prediction and the outer band of the original
/// pre-crop image. aux images must share the pre-crop side.
template <typename S>
LossBreakdown<S> integrated_loss(Tape<S>& tape, const Tensor<S>& pred,
                                 const std::vector<const PatchSequence*>& targets,
                                 const std::vector<std::vector<uint8_t>>& visible,
                                 const std::vector<const Image*>& aux, int patch,
                                 double outer_weight);

/// Area (exact box-overlap average) resample; square output.
Image area_resize(const Image& img, int new_side);

}  // namespace vtpt
