#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vtpt/image.hpp"
#include "vtpt/rng.hpp"

namespace vtpt {

enum class Task {
  masked,
  zoomed_in,
  zoomed_out,
  distorted,
  blurred,
  decolorized,
  shuffled,
  wave_distorted,
  integrated,
};

/// The six entries whose factor tags come straight from the reference table.
constexpr int kCanonicalTaskCount = 6;

std::string task_name(Task task);
Task task_from_name(const std::string& name);
const std::vector<Task>& all_tasks();

enum class PadMode { mirror, none, black, other_image };
enum class ZoomLocation { center, random };
enum class KernelMode { random_normal, random_raw, delta };

std::string pad_mode_name(PadMode m);
PadMode pad_mode_from_name(const std::string& name);

/// Degradation selection plus every task-specific knob. Geometry fields are
/// in pixels; patch is the token side used for alignment and mask geometry.
struct DegradationSpec {
  Task task = Task::masked;
  int patch = 16;
  int canvas_side = 224;  // model input side

  // masked / integrated
  double mask_ratio = 0.75;
  bool block_mask = false;

  // zoomed_in / zoomed_out
  int scale_s = 160;
  bool scale_random = false;  // zoomed_out: redraw S per sample
  ZoomLocation zoom_location = ZoomLocation::center;
  PadMode pad_mode = PadMode::mirror;
  bool align_tokens = true;  // force S, a, b onto patch boundaries

  // distorted
  double twist_lo = 0.20;
  double twist_hi = 0.25;

  // blurred
  int kernel_size = 9;
  KernelMode kernel_mode = KernelMode::random_normal;

  // decolorized
  double saturation = 0.3;

  // wave_distorted
  double wave_amplitude = 8.0;
  double wave_period = 64.0;

  // integrated
  int aux_side = 320;
  double outer_weight = 1.0;

  // Recovery targets are per-patch standardized by default; raw-pixel mode
  // is kept for comparison runs. The integrated center term is always
  // normalized.
  bool normalized_targets = true;

  /// Throws std::invalid_argument listing every violated constraint.
  void validate() const;
};

/// Presence flags for the three degradation factors of the reference table:
/// information missing, spatial transformation, style change. derived marks
/// tasks outside the table whose tags are our classification, not its rows.
struct FactorTags {
  bool information_missing = false;
  bool spatial_transform = false;
  bool style_change = false;
  bool derived = false;
};

FactorTags factor_tags(Task task);

/// One degraded training pair. input and target share the canvas except that
/// aux, when present, is the larger pre-crop canvas for the outer-band loss.
/// visible has one entry per token; non-masking tasks set all of them.
struct DegradedSample {
  Image input;
  Image target;
  std::vector<uint8_t> visible;
  std::optional<Image> aux;
};

// ---- token masks ----

/// Masks exactly floor(ratio * count) tokens, uniformly without replacement.
std::vector<uint8_t> mask_random(int count, double ratio, Rng& rng);

/// Keeps one contiguous axis-aligned rectangle of tokens whose area is the
/// achievable value closest to (1-ratio)*count (squarer shapes win ties);
/// its position is uniform among valid placements.
std::vector<uint8_t> mask_block(int grid_rows, int grid_cols, double ratio, Rng& rng);

// ---- degradation operators ----
// Every operator maps [0,1] images to [0,1] images, is pure given its Rng,
// and reproduces the source exactly in its identity limit.

DegradedSample zoom_in(const Image& img, int scale_s, ZoomLocation location, int patch,
                       Rng& rng);

DegradedSample zoom_out(const Image& img, int scale_s, int a, int b, PadMode pad_mode,
                        int patch, const Image* other = nullptr);

/// Barrel distortion: an output pixel at normalized radius rho (radius over
/// the max center-to-corner distance) samples the source at
/// rho * (1 - twist * (1 - rho)) along the same ray, bilinearly.
DegradedSample fisheye(const Image& img, double center_y, double center_x, double twist,
                       int patch);

/// Row y samples source column (x + amplitude*sin(2*pi*y/period)) mod width;
/// wrap-around sampling, so no pixel goes missing.
DegradedSample wave_distort(const Image& img, double amplitude, double period, int patch);

/// One k x k kernel shared by all channels, reflect padding. random_normal
/// draws i.i.d. standard normals then maps w to |w|/sum|w| so brightness is
/// preserved; random_raw keeps the raw draws (clamped output); delta is the
/// identity kernel.
DegradedSample blur(const Image& img, int kernel_size, KernelMode mode, Rng& rng, int patch);

/// RGB -> HSV, saturation scaled by s, HSV -> RGB, clamped.
DegradedSample desaturate(const Image& img, double s, int patch);

/// Uniform random permutation of the patch grid; the target stays in place
/// (pixel-wise recovery, not permutation prediction).
DegradedSample shuffle_patches(const Image& img, Rng& rng, int patch);

/// Dispatches on spec.task. For zoomed_out with other_image padding, other
/// must point at a same-geometry image. For integrated, img must be at
/// aux_side; the center canvas_side crop becomes input and target and img
/// itself is attached as aux.
DegradedSample make_sample(const DegradationSpec& spec, const Image& img, Rng& rng,
                           const Image* other = nullptr);

}  // namespace vtpt
