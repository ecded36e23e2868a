#include "vtpt/patch.hpp"

#include <cmath>
#include <stdexcept>

namespace vtpt {

PatchSequence patchify(const Image& img, int patch) {
  if (patch <= 0) throw std::invalid_argument("patchify: patch side must be positive");
  if (img.height % patch != 0 || img.width % patch != 0)
    throw std::invalid_argument("patchify: image " + std::to_string(img.height) + "x" +
                                std::to_string(img.width) + " not divisible by patch " +
                                std::to_string(patch));
  PatchSequence seq;
  seq.patch = patch;
  seq.grid_rows = img.height / patch;
  seq.grid_cols = img.width / patch;
  seq.count = seq.grid_rows * seq.grid_cols;
  seq.data.resize(static_cast<size_t>(seq.count) * seq.row_size());
  for (int r = 0; r < seq.grid_rows; ++r)
    for (int c = 0; c < seq.grid_cols; ++c) {
      float* row = seq.row(r * seq.grid_cols + c);
      for (int ch = 0; ch < 3; ++ch)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            row[ch * patch * patch + py * patch + px] =
                img.at(ch, r * patch + py, c * patch + px);
    }
  return seq;
}

Image unpatchify(const PatchSequence& seq) {
  if (seq.count != seq.grid_rows * seq.grid_cols ||
      seq.data.size() != static_cast<size_t>(seq.count) * seq.row_size())
    throw std::invalid_argument("unpatchify: inconsistent sequence geometry");
  int patch = seq.patch;
  Image img = Image::zeros(seq.grid_rows * patch, seq.grid_cols * patch);
  for (int r = 0; r < seq.grid_rows; ++r)
    for (int c = 0; c < seq.grid_cols; ++c) {
      const float* row = seq.row(r * seq.grid_cols + c);
      for (int ch = 0; ch < 3; ++ch)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            img.at(ch, r * patch + py, c * patch + px) =
                row[ch * patch * patch + py * patch + px];
    }
  return img;
}

std::pair<PatchSequence, TargetStats> normalize_targets(const PatchSequence& seq, float eps) {
  PatchSequence out = seq;
  TargetStats stats;
  stats.eps = eps;
  stats.mean.resize(seq.count);
  stats.stddev.resize(seq.count);
  int n = seq.row_size();
  for (int m = 0; m < seq.count; ++m) {
    const float* src = seq.row(m);
    float* dst = out.row(m);
    double mu = 0;
    for (int i = 0; i < n; ++i) mu += src[i];
    mu /= n;
    double var = 0;
    for (int i = 0; i < n; ++i) {
      double d = src[i] - mu;
      var += d * d;
    }
    var /= n;
    float sd = static_cast<float>(std::sqrt(var));
    stats.mean[m] = static_cast<float>(mu);
    stats.stddev[m] = sd;
    // Denominator recomputed from the stored stddev so the inverse transform
    // uses the identical value.
    float denom = std::sqrt(sd * sd + eps);
    for (int i = 0; i < n; ++i) dst[i] = (src[i] - stats.mean[m]) / denom;
  }
  return {std::move(out), std::move(stats)};
}

PatchSequence denormalize_targets(const PatchSequence& seq, const TargetStats& stats) {
  if (static_cast<int>(stats.mean.size()) != seq.count ||
      static_cast<int>(stats.stddev.size()) != seq.count)
    throw std::invalid_argument("denormalize: stats do not match sequence");
  PatchSequence out = seq;
  int n = seq.row_size();
  for (int m = 0; m < seq.count; ++m) {
    float denom = std::sqrt(stats.stddev[m] * stats.stddev[m] + stats.eps);
    float* dst = out.row(m);
    for (int i = 0; i < n; ++i) dst[i] = dst[i] * denom + stats.mean[m];
  }
  return out;
}

Tensor<float> sincos_pos_embed(int grid_rows, int grid_cols, int dim) {
  if (dim % 4 != 0)
    throw std::invalid_argument("sincos_pos_embed: dim must divide by 4, got " +
                                std::to_string(dim));
  if (grid_rows <= 0 || grid_cols <= 0)
    throw std::invalid_argument("sincos_pos_embed: non-positive grid");
  int quarter = dim / 4;
  Tensor<float> out = Tensor<float>::zeros({grid_rows * grid_cols, dim});
  for (int r = 0; r < grid_rows; ++r)
    for (int c = 0; c < grid_cols; ++c) {
      float* row = out.data() + static_cast<size_t>(r * grid_cols + c) * dim;
      for (int k = 0; k < quarter; ++k) {
        double omega = std::pow(10000.0, -static_cast<double>(k) / quarter);
        row[k] = static_cast<float>(std::sin(r * omega));
        row[quarter + k] = static_cast<float>(std::cos(r * omega));
        row[2 * quarter + k] = static_cast<float>(std::sin(c * omega));
        row[3 * quarter + k] = static_cast<float>(std::cos(c * omega));
      }
    }
  return out;
}

}  // namespace vtpt
