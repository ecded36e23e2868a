#pragma once

#include <utility>
#include <vector>

#include "vtpt/image.hpp"
#include "vtpt/tensor.hpp"

namespace vtpt {

/// Non-overlapping patch tokens of an image. Row m holds patch
/// (m / grid_cols, m % grid_cols) flattened channel-major then row-major:
/// value index c*P*P + py*P + px. This order is part of the checkpoint
/// contract and must not change.
struct PatchSequence {
  int count = 0;  // M
  int patch = 0;  // P, pixels per side
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<float> data;  // count x (3*P*P)

  int row_size() const { return 3 * patch * patch; }
  float* row(int m) { return data.data() + static_cast<size_t>(m) * row_size(); }
  const float* row(int m) const { return data.data() + static_cast<size_t>(m) * row_size(); }
};

/// Per-patch first and second moments kept for de-normalization.
struct TargetStats {
  std::vector<float> mean;    // M
  std::vector<float> stddev;  // M
  float eps = 1e-6f;
};

/// Splits an image into P x P patches. Height and width must divide by P.
PatchSequence patchify(const Image& img, int patch);

/// Exact inverse of patchify.
Image unpatchify(const PatchSequence& seq);

/// Per-patch standardization (x - mean) / sqrt(var + eps). Constant patches
/// map to zeros; the returned stats invert the transform.
std::pair<PatchSequence, TargetStats> normalize_targets(const PatchSequence& seq,
                                                        float eps = 1e-6f);

PatchSequence denormalize_targets(const PatchSequence& seq, const TargetStats& stats);

/// Fixed 2-D sine-cosine position embedding for a grid, shape [rows*cols, dim].
/// dim must divide by 4: the first half encodes the row index, the second the
/// column, each as dim/4 sine then dim/4 cosine values. Values lie in [-1,1].
Tensor<float> sincos_pos_embed(int grid_rows, int grid_cols, int dim);

}  // namespace vtpt
