#include "vtpt/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "vtpt/patch.hpp"

namespace vtpt {

namespace {

const std::vector<std::pair<Task, const char*>>& task_table() {
  static const std::vector<std::pair<Task, const char*>> table = {
      {Task::masked, "masked"},
      {Task::zoomed_in, "zoomed_in"},
      {Task::zoomed_out, "zoomed_out"},
      {Task::distorted, "distorted"},
      {Task::blurred, "blurred"},
      {Task::decolorized, "decolorized"},
      {Task::shuffled, "shuffled"},
      {Task::wave_distorted, "wave_distorted"},
      {Task::integrated, "integrated"},
  };
  return table;
}

int require_square(const Image& img, const char* op) {
  if (img.height != img.width)
    throw std::invalid_argument(std::string(op) + ": canvas must be square, got " +
                                std::to_string(img.height) + "x" + std::to_string(img.width));
  return img.height;
}

int token_count(const Image& img, int patch) {
  if (patch <= 0 || img.height % patch != 0 || img.width % patch != 0)
    throw std::invalid_argument("degrade: canvas " + std::to_string(img.height) + "x" +
                                std::to_string(img.width) + " not divisible by patch " +
                                std::to_string(patch));
  return (img.height / patch) * (img.width / patch);
}

DegradedSample plain_sample(const Image& input, const Image& target, int patch) {
  DegradedSample s;
  s.input = input;
  s.target = target;
  s.visible.assign(token_count(target, patch), 1);
  return s;
}

float sample_clamped(const Image& img, int c, double fy, double fx) {
  fy = std::min(std::max(fy, 0.0), static_cast<double>(img.height - 1));
  fx = std::min(std::max(fx, 0.0), static_cast<double>(img.width - 1));
  int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
  int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  float wy = static_cast<float>(fy - y0), wx = static_cast<float>(fx - x0);
  float top = (1.0f - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1);
  float bot = (1.0f - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1);
  return (1.0f - wy) * top + wy * bot;
}

// Symmetric (edge-repeating) reflection of i into [0, n).
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

void fill_masked_patches(Image& img, const std::vector<uint8_t>& visible, int patch) {
  int grid_cols = img.width / patch;
  for (size_t m = 0; m < visible.size(); ++m) {
    if (visible[m]) continue;
    int r = static_cast<int>(m) / grid_cols, c = static_cast<int>(m) % grid_cols;
    for (int ch = 0; ch < 3; ++ch)
      for (int py = 0; py < patch; ++py)
        for (int px = 0; px < patch; ++px)
          img.at(ch, r * patch + py, c * patch + px) = 0.5f;  // display only
  }
}

}  // namespace

std::string task_name(Task task) {
  for (const auto& [t, n] : task_table())
    if (t == task) return n;
  throw std::invalid_argument("task_name: unknown task");
}

Task task_from_name(const std::string& name) {
  for (const auto& [t, n] : task_table())
    if (name == n) return t;
  throw std::invalid_argument("unknown task '" + name + "'");
}

const std::vector<Task>& all_tasks() {
  static const std::vector<Task> tasks = [] {
    std::vector<Task> v;
    for (const auto& [t, n] : task_table()) v.push_back(t);
    return v;
  }();
  return tasks;
}

std::string pad_mode_name(PadMode m) {
  switch (m) {
    case PadMode::mirror: return "mirror";
    case PadMode::none: return "none";
    case PadMode::black: return "black";
    case PadMode::other_image: return "other_image";
  }
  throw std::invalid_argument("pad_mode_name: unknown mode");
}

PadMode pad_mode_from_name(const std::string& name) {
  if (name == "mirror") return PadMode::mirror;
  if (name == "none") return PadMode::none;
  if (name == "black") return PadMode::black;
  if (name == "other_image") return PadMode::other_image;
  throw std::invalid_argument("unknown pad mode '" + name + "'");
}

void DegradationSpec::validate() const {
  std::vector<std::string> problems;
  auto bad = [&](const std::string& p) { problems.push_back(p); };
  if (patch <= 0) bad("patch must be positive");
  if (canvas_side <= 0 || (patch > 0 && canvas_side % patch != 0))
    bad("canvas_side must be a positive multiple of patch");
  if (mask_ratio < 0.0 || mask_ratio >= 1.0) bad("mask_ratio must be in [0,1)");
  if (task == Task::zoomed_in || task == Task::zoomed_out) {
    if (scale_s <= 0 || (patch > 0 && scale_s % patch != 0))
      bad("scale_s must be a positive multiple of patch");
    if (scale_s > canvas_side) bad("scale_s must not exceed canvas_side");
  }
  if (twist_lo < 0.0 || twist_hi >= 1.0 || twist_lo > twist_hi)
    bad("twist interval must satisfy 0 <= lo <= hi < 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) bad("kernel_size must be odd and >= 1");
  if (saturation < 0.0 || saturation > 1.0) bad("saturation must be in [0,1]");
  if (wave_amplitude < 0.0) bad("wave_amplitude must be >= 0");
  if (wave_period <= 0.0) bad("wave_period must be positive");
  if (task == Task::integrated) {
    if (aux_side <= canvas_side) bad("aux_side must exceed canvas_side");
    if (patch > 0 && aux_side % patch != 0) bad("aux_side must be a multiple of patch");
    if (outer_weight < 0.0) bad("outer_weight must be >= 0");
  }
  if (task == Task::zoomed_out && pad_mode == PadMode::none && !align_tokens)
    bad("pad_mode none requires token alignment");
  if (!problems.empty()) {
    std::ostringstream os;
    os << "invalid degradation spec (" << task_name(task) << "):";
    for (const auto& p : problems) os << "\n  - " << p;
    throw std::invalid_argument(os.str());
  }
}

FactorTags factor_tags(Task task) {
  // Six canonical rows follow the reference table exactly; shuffled and
  // wave_distorted are our classification and carry the derived marker.
  switch (task) {
    case Task::masked: return {true, false, false, false};
    case Task::zoomed_in: return {true, true, false, false};
    case Task::zoomed_out: return {false, true, false, false};
    case Task::distorted: return {false, true, true, false};
    case Task::blurred: return {false, false, true, false};
    case Task::decolorized: return {false, false, true, false};
    case Task::integrated: return {true, true, false, false};
    case Task::shuffled: return {false, true, false, true};
    case Task::wave_distorted: return {false, true, false, true};
  }
  throw std::invalid_argument("factor_tags: unknown task");
}

std::vector<uint8_t> mask_random(int count, double ratio, Rng& rng) {
  if (count <= 0) throw std::invalid_argument("mask_random: count must be positive");
  if (ratio < 0.0 || ratio >= 1.0)
    throw std::invalid_argument("mask_random: ratio must be in [0,1)");
  int masked = static_cast<int>(std::floor(ratio * count));
  std::vector<int> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < masked; ++i) {
    int j = i + static_cast<int>(rng.next_below(static_cast<uint64_t>(count - i)));
    std::swap(idx[i], idx[j]);
  }
  std::vector<uint8_t> visible(count, 1);
  for (int i = 0; i < masked; ++i) visible[idx[i]] = 0;
  return visible;
}

std::vector<uint8_t> mask_block(int grid_rows, int grid_cols, double ratio, Rng& rng) {
  if (grid_rows <= 0 || grid_cols <= 0)
    throw std::invalid_argument("mask_block: grid must be positive");
  if (ratio < 0.0 || ratio >= 1.0)
    throw std::invalid_argument("mask_block: ratio must be in [0,1)");
  int count = grid_rows * grid_cols;
  double target = (1.0 - ratio) * count;
  // Smallest area error wins; squarer rectangles break ties.
  int best_h = grid_rows, best_w = grid_cols;
  auto key = [&](int h, int w) {
    return std::make_tuple(std::abs(h * w - target), -std::min(h, w), std::abs(h - w), h);
  };
  for (int h = 1; h <= grid_rows; ++h)
    for (int w = 1; w <= grid_cols; ++w)
      if (key(h, w) < key(best_h, best_w)) {
        best_h = h;
        best_w = w;
      }
  int a = static_cast<int>(rng.next_below(static_cast<uint64_t>(grid_rows - best_h + 1)));
  int b = static_cast<int>(rng.next_below(static_cast<uint64_t>(grid_cols - best_w + 1)));
  std::vector<uint8_t> visible(count, 0);
  for (int r = a; r < a + best_h; ++r)
    for (int c = b; c < b + best_w; ++c) visible[r * grid_cols + c] = 1;
  return visible;
}

DegradedSample zoom_in(const Image& img, int scale_s, ZoomLocation location, int patch,
                       Rng& rng) {
  int side = require_square(img, "zoom_in");
  if (scale_s <= 0 || scale_s > side || scale_s % patch != 0)
    throw std::invalid_argument("zoom_in: S must be a multiple of " + std::to_string(patch) +
                                " within the canvas, got " + std::to_string(scale_s));
  int y0, x0;
  if (location == ZoomLocation::center) {
    y0 = (side - scale_s) / 2;
    x0 = (side - scale_s) / 2;
  } else {
    y0 = static_cast<int>(rng.next_below(static_cast<uint64_t>(side - scale_s + 1)));
    x0 = static_cast<int>(rng.next_below(static_cast<uint64_t>(side - scale_s + 1)));
  }
  Image input = rescale_bilinear(img, CropRect{y0, x0, scale_s, scale_s}, side, side);
  clamp01(input);
  return plain_sample(input, img, patch);
}

DegradedSample zoom_out(const Image& img, int scale_s, int a, int b, PadMode pad_mode,
                        int patch, const Image* other) {
  int side = require_square(img, "zoom_out");
  if (scale_s <= 0 || scale_s > side)
    throw std::invalid_argument("zoom_out: S out of range");
  if (a < 0 || b < 0 || a + scale_s > side || b + scale_s > side)
    throw std::invalid_argument("zoom_out: square at (" + std::to_string(a) + "," +
                                std::to_string(b) + ") leaves the canvas");
  Image scaled = rescale_bilinear(img, scale_s, scale_s);
  clamp01(scaled);
  Image input = Image::zeros(side, side);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) {
        bool inside = y >= a && y < a + scale_s && x >= b && x < b + scale_s;
        switch (pad_mode) {
          case PadMode::mirror:
            input.at(c, y, x) = scaled.at(c, reflect_index(y - a, scale_s),
                                          reflect_index(x - b, scale_s));
            break;
          case PadMode::black:
          case PadMode::none:
            input.at(c, y, x) = inside ? scaled.at(c, y - a, x - b) : 0.0f;
            break;
          case PadMode::other_image:
            if (inside) {
              input.at(c, y, x) = scaled.at(c, y - a, x - b);
            } else {
              if (other == nullptr || !other->same_geometry(img))
                throw std::invalid_argument(
                    "zoom_out: other_image padding needs a same-size second image");
              input.at(c, y, x) = other->at(c, y, x);
            }
            break;
        }
      }
  DegradedSample s = plain_sample(input, img, patch);
  if (pad_mode == PadMode::none) {
    // The pad region carries no content: its tokens are absent from the
    // encoder input and the model runs on the smaller visible grid.
    if (a % patch != 0 || b % patch != 0 || scale_s % patch != 0)
      throw std::invalid_argument("zoom_out: pad mode none requires token alignment");
    int grid = side / patch;
    for (int r = 0; r < grid; ++r)
      for (int c = 0; c < grid; ++c) {
        bool inside = r >= a / patch && r < (a + scale_s) / patch && c >= b / patch &&
                      c < (b + scale_s) / patch;
        s.visible[r * grid + c] = inside ? 1 : 0;
      }
  }
  return s;
}

DegradedSample fisheye(const Image& img, double center_y, double center_x, double twist,
                       int patch) {
  require_square(img, "fisheye");
  if (twist < 0.0 || twist >= 1.0)
    throw std::invalid_argument("fisheye: twist must be in [0,1), got " +
                                std::to_string(twist));
  if (center_y < 0 || center_y > img.height - 1 || center_x < 0 || center_x > img.width - 1)
    throw std::invalid_argument("fisheye: center outside the canvas");
  double r_max = 0.0;
  for (int cy : {0, img.height - 1})
    for (int cx : {0, img.width - 1})
      r_max = std::max(r_max, std::hypot(cy - center_y, cx - center_x));
  Image input = Image::zeros(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double dy = y - center_y, dx = x - center_x;
      double r = std::hypot(dy, dx);
      double s = 1.0;
      if (r > 0.0) {
        double rho = r / r_max;
        double rho_s = rho * (1.0 - twist * (1.0 - rho));
        s = rho_s / rho;
      }
      for (int c = 0; c < 3; ++c)
        input.at(c, y, x) = sample_clamped(img, c, center_y + dy * s, center_x + dx * s);
    }
  clamp01(input);
  return plain_sample(input, img, patch);
}

DegradedSample wave_distort(const Image& img, double amplitude, double period, int patch) {
  if (amplitude < 0.0) throw std::invalid_argument("wave_distort: amplitude must be >= 0");
  if (period <= 0.0) throw std::invalid_argument("wave_distort: period must be positive");
  Image input = Image::zeros(img.height, img.width);
  int w = img.width;
  for (int y = 0; y < img.height; ++y) {
    double shift = amplitude * std::sin(2.0 * M_PI * y / period);
    for (int x = 0; x < w; ++x) {
      double fx = x + shift;
      double wrapped = fx - w * std::floor(fx / w);
      int x0 = static_cast<int>(std::floor(wrapped)) % w;
      int x1 = (x0 + 1) % w;
      float frac = static_cast<float>(wrapped - std::floor(wrapped));
      for (int c = 0; c < 3; ++c)
        input.at(c, y, x) = (1.0f - frac) * img.at(c, y, x0) + frac * img.at(c, y, x1);
    }
  }
  clamp01(input);
  return plain_sample(input, img, patch);
}

DegradedSample blur(const Image& img, int kernel_size, KernelMode mode, Rng& rng, int patch) {
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw std::invalid_argument("blur: kernel side must be odd, got " +
                                std::to_string(kernel_size));
  int k = kernel_size, half = k / 2;
  std::vector<float> kernel(static_cast<size_t>(k) * k, 0.0f);
  switch (mode) {
    case KernelMode::delta:
      kernel[static_cast<size_t>(half) * k + half] = 1.0f;
      break;
    case KernelMode::random_normal: {
      double total = 0.0;
      for (auto& w : kernel) {
        w = static_cast<float>(std::abs(rng.normal()));
        total += w;
      }
      for (auto& w : kernel) w = static_cast<float>(w / total);
      break;
    }
    case KernelMode::random_raw:
      for (auto& w : kernel) w = static_cast<float>(rng.normal());
      break;
  }
  Image input = Image::zeros(img.height, img.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        float acc = 0.0f;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            int sy = reflect_index(y + ky - half, img.height);
            int sx = reflect_index(x + kx - half, img.width);
            acc += kernel[static_cast<size_t>(ky) * k + kx] * img.at(c, sy, sx);
          }
        input.at(c, y, x) = acc;
      }
  clamp01(input);
  return plain_sample(input, img, patch);
}

namespace {

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max({r, g, b}), mn = std::min({r, g, b});
  float c = mx - mn;
  v = mx;
  s = mx > 0.0f ? c / mx : 0.0f;
  if (c == 0.0f) {
    h = 0.0f;
  } else if (mx == r) {
    h = 60.0f * std::fmod((g - b) / c + 6.0f, 6.0f);
  } else if (mx == g) {
    h = 60.0f * ((b - r) / c + 2.0f);
  } else {
    h = 60.0f * ((r - g) / c + 4.0f);
  }
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  float c = v * s;
  float hp = h / 60.0f;
  float x = c * (1.0f - std::abs(std::fmod(hp, 2.0f) - 1.0f));
  float r1 = 0, g1 = 0, b1 = 0;
  if (hp < 1) {
    r1 = c; g1 = x;
  } else if (hp < 2) {
    r1 = x; g1 = c;
  } else if (hp < 3) {
    g1 = c; b1 = x;
  } else if (hp < 4) {
    g1 = x; b1 = c;
  } else if (hp < 5) {
    r1 = x; b1 = c;
  } else {
    r1 = c; b1 = x;
  }
  float m = v - c;
  r = r1 + m;
  g = g1 + m;
  b = b1 + m;
}

}  // namespace

DegradedSample desaturate(const Image& img, double s, int patch) {
  if (s < 0.0 || s > 1.0)
    throw std::invalid_argument("desaturate: scale must be in [0,1], got " + std::to_string(s));
  Image input = Image::zeros(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float h, sat, v;
      rgb_to_hsv(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x), h, sat, v);
      float r, g, b;
      hsv_to_rgb(h, sat * static_cast<float>(s), v, r, g, b);
      input.at(0, y, x) = r;
      input.at(1, y, x) = g;
      input.at(2, y, x) = b;
    }
  clamp01(input);
  return plain_sample(input, img, patch);
}

DegradedSample shuffle_patches(const Image& img, Rng& rng, int patch) {
  PatchSequence seq = patchify(img, patch);
  std::vector<int> perm(seq.count);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  PatchSequence shuffled = seq;
  for (int m = 0; m < seq.count; ++m)
    std::copy_n(seq.row(perm[m]), seq.row_size(), shuffled.row(m));
  return plain_sample(unpatchify(shuffled), img, patch);
}

DegradedSample make_sample(const DegradationSpec& spec, const Image& img, Rng& rng,
                           const Image* other) {
  spec.validate();
  switch (spec.task) {
    case Task::masked: {
      int count = token_count(img, spec.patch);
      int grid = img.height / spec.patch;
      DegradedSample s = plain_sample(img, img, spec.patch);
      s.visible = spec.block_mask ? mask_block(grid, img.width / spec.patch, spec.mask_ratio, rng)
                                  : mask_random(count, spec.mask_ratio, rng);
      fill_masked_patches(s.input, s.visible, spec.patch);
      return s;
    }
    case Task::zoomed_in:
      return zoom_in(img, spec.scale_s, spec.zoom_location, spec.patch, rng);
    case Task::zoomed_out: {
      int side = require_square(img, "zoom_out");
      int s_px = spec.scale_s;
      if (spec.scale_random) {
        // Redrawn per sample: uniform over patch multiples in [side/2, side-patch].
        int lo = std::max(spec.patch, (side / 2 / spec.patch) * spec.patch);
        int hi = side - spec.patch;
        int steps = (hi - lo) / spec.patch + 1;
        s_px = lo + spec.patch * static_cast<int>(rng.next_below(steps));
      }
      int a, b;
      if (spec.align_tokens) {
        int slots = (side - s_px) / spec.patch + 1;
        a = spec.patch * static_cast<int>(rng.next_below(slots));
        b = spec.patch * static_cast<int>(rng.next_below(slots));
      } else {
        a = static_cast<int>(rng.next_below(side - s_px + 1));
        b = static_cast<int>(rng.next_below(side - s_px + 1));
      }
      return zoom_out(img, s_px, a, b, spec.pad_mode, spec.patch, other);
    }
    case Task::distorted: {
      int side = require_square(img, "fisheye");
      double cy = rng.uniform(0.0, side - 1.0);
      double cx = rng.uniform(0.0, side - 1.0);
      double twist = rng.uniform(spec.twist_lo, spec.twist_hi);
      return fisheye(img, cy, cx, twist, spec.patch);
    }
    case Task::blurred:
      return blur(img, spec.kernel_size, spec.kernel_mode, rng, spec.patch);
    case Task::decolorized:
      return desaturate(img, spec.saturation, spec.patch);
    case Task::shuffled:
      return shuffle_patches(img, rng, spec.patch);
    case Task::wave_distorted:
      return wave_distort(img, spec.wave_amplitude, spec.wave_period, spec.patch);
    case Task::integrated: {
      int side = require_square(img, "integrated");
      if (side != spec.aux_side)
        throw std::invalid_argument("integrated: expects the pre-crop canvas of side " +
                                    std::to_string(spec.aux_side) + ", got " +
                                    std::to_string(side));
      Image center = center_crop(img, spec.canvas_side);
      DegradedSample s = plain_sample(center, center, spec.patch);
      s.visible = mask_random(token_count(center, spec.patch), spec.mask_ratio, rng);
      fill_masked_patches(s.input, s.visible, spec.patch);
      s.aux = img;
      return s;
    }
  }
  throw std::invalid_argument("make_sample: unknown task");
}

}  // namespace vtpt
