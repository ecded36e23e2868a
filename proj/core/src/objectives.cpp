#include "vtpt/objectives.hpp"

#include <stdexcept>

namespace vtpt {

namespace {

template <typename S>
Tensor<S> build_target(const std::vector<const PatchSequence*>& targets, bool normalized) {
  const PatchSequence& first = *targets[0];
  int rs = first.row_size();
  int m = first.count;
  Tensor<S> out = Tensor<S>::zeros({static_cast<int>(targets.size()) * m, rs});
  S* dst = out.data();
  for (const PatchSequence* t : targets) {
    if (t->count != m || t->row_size() != rs)
      throw std::invalid_argument("recovery_loss: mixed target geometry in batch");
    if (normalized) {
      auto [norm, stats] = normalize_targets(*t);
      for (size_t i = 0; i < norm.data.size(); ++i) dst[i] = static_cast<S>(norm.data[i]);
    } else {
      for (size_t i = 0; i < t->data.size(); ++i) dst[i] = static_cast<S>(t->data[i]);
    }
    dst += static_cast<size_t>(m) * rs;
  }
  return out;
}

}  // namespace

template <typename S>
LossBreakdown<S> recovery_loss(Tape<S>& tape, const Tensor<S>& pred,
                               const std::vector<const PatchSequence*>& targets,
                               const std::vector<std::vector<uint8_t>>& visible,
                               bool normalized) {
  if (targets.empty() || targets.size() != visible.size())
    throw std::invalid_argument("recovery_loss: batch size mismatch");
  int m = targets[0]->count;
  int rs = targets[0]->row_size();
  int batch = static_cast<int>(targets.size());
  if (pred.rows() != batch * m || pred.cols() != rs)
    throw std::invalid_argument("recovery_loss: prediction geometry " +
                                shape_str(pred.shape()) + " does not match targets");

  int64_t masked_total = 0;
  for (const auto& vis : visible) {
    if (static_cast<int>(vis.size()) != m)
      throw std::invalid_argument("recovery_loss: visible mask length != token count");
    for (uint8_t v : vis) masked_total += v ? 0 : 1;
  }

  Tensor<S> target = build_target<S>(targets, normalized);
  LossBreakdown<S> out;
  if (masked_total == 0) {
    out.center = tape.mse(pred, target);
    out.selected_tokens = static_cast<int64_t>(batch) * m;
  } else {
    std::vector<uint8_t> keep(static_cast<size_t>(batch) * m * rs, 0);
    for (int b = 0; b < batch; ++b)
      for (int t = 0; t < m; ++t)
        if (!visible[b][t])
          std::fill_n(keep.begin() + (static_cast<size_t>(b) * m + t) * rs, rs,
                      static_cast<uint8_t>(1));
    out.center = tape.mse(pred, target, std::move(keep));
    out.selected_tokens = masked_total;
  }
  out.total = out.center;
  return out;
}

template <typename S>
LossBreakdown<S> integrated_loss(Tape<S>& tape, const Tensor<S>& pred,
                                 const std::vector<const PatchSequence*>& targets,
                                 const std::vector<std::vector<uint8_t>>& visible,
                                 const std::vector<const Image*>& aux, int patch,
                                 double outer_weight) {
  if (outer_weight < 0.0)
    throw std::invalid_argument("integrated_loss: outer_weight must be >= 0");
  LossBreakdown<S> out = recovery_loss(tape, pred, targets, visible, /*normalized=*/true);
  if (outer_weight == 0.0) return out;  // bit-equal to the plain masked loss

  if (aux.size() != targets.size())
    throw std::invalid_argument("integrated_loss: aux count != batch");
  int batch = static_cast<int>(targets.size());
  int grid_rows = targets[0]->grid_rows, grid_cols = targets[0]->grid_cols;
  int canvas = grid_rows * patch;
  int aux_side = aux[0]->height;
  if (aux_side <= canvas)
    throw std::invalid_argument("integrated_loss: aux canvas must exceed the model canvas");

  Tensor<S> aux_target = Tensor<S>::zeros({batch, 3, aux_side, aux_side});
  S* dst = aux_target.data();
  for (const Image* img : aux) {
    if (img->height != aux_side || img->width != aux_side)
      throw std::invalid_argument("integrated_loss: mixed aux geometry");
    for (float v : img->data) *dst++ = static_cast<S>(v);
  }

  // Band mask: everything outside the centered canvas-sized square.
  int off = (aux_side - canvas) / 2;
  std::vector<uint8_t> band(static_cast<size_t>(batch) * 3 * aux_side * aux_side, 1);
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < 3; ++c)
      for (int y = off; y < off + canvas; ++y)
        std::fill_n(band.begin() +
                        ((static_cast<size_t>(b) * 3 + c) * aux_side + y) * aux_side + off,
                    canvas, static_cast<uint8_t>(0));

  Tensor<S> image = tape.unpatchify(pred, batch, grid_rows, grid_cols, patch);
  Tensor<S> resized = tape.area_resize(image, aux_side, aux_side);
  out.outer = tape.mse(resized, aux_target, std::move(band));
  out.total = tape.add(out.center, tape.scale(out.outer, static_cast<S>(outer_weight)));
  return out;
}

Image area_resize(const Image& img, int new_side) {
  if (new_side <= 0) throw std::invalid_argument("area_resize: side must be positive");
  Tensor<float> in = Tensor<float>::zeros({1, 3, img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), in.data());
  Tape<float> tape(false);
  Tensor<float> out = tape.area_resize(in, new_side, new_side);
  Image result = Image::zeros(new_side, new_side);
  std::copy_n(out.data(), result.data.size(), result.data.begin());
  return result;
}

#define VTPT_INSTANTIATE(S)                                                           \
  template LossBreakdown<S> recovery_loss<S>(                                         \
      Tape<S>&, const Tensor<S>&, const std::vector<const PatchSequence*>&,           \
      const std::vector<std::vector<uint8_t>>&, bool);                                \
  template LossBreakdown<S> integrated_loss<S>(                                       \
      Tape<S>&, const Tensor<S>&, const std::vector<const PatchSequence*>&,           \
      const std::vector<std::vector<uint8_t>>&, const std::vector<const Image*>&, int, \
      double);

VTPT_INSTANTIATE(float)
VTPT_INSTANTIATE(double)
#undef VTPT_INSTANTIATE

}  // namespace vtpt
