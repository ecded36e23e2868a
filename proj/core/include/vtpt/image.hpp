#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vtpt {

/// Dense 3-channel raster, values in [0,1], channel-major then row-major:
/// data[(c*H + y)*W + x].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  static Image zeros(int height, int width);

  float& at(int c, int y, int x) {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<size_t>(c) * height + y) * width + x];
  }
  bool same_geometry(const Image& o) const {
    return height == o.height && width == o.width;
  }
};

/// Clamps every value into [0,1].
void clamp01(Image& img);

/// Largest absolute per-pixel difference; images must share geometry.
float max_abs_diff(const Image& a, const Image& b);

struct CropRect {
  int y0 = 0, x0 = 0, h = 0, w = 0;
};

/// Bilinear resample of a crop rectangle to out_h x out_w. The sampling grid
/// pins the integer center: destination index oh/2 maps to source index
/// y0 + h/2, so a full-frame same-size resample is the exact identity and the
/// canvas-center pixel of a centered crop is copied, not interpolated.
/// Samples are clamped to the crop rectangle.
Image rescale_bilinear(const Image& src, const CropRect& crop, int out_h, int out_w);

/// Full-frame convenience overload.
Image rescale_bilinear(const Image& src, int out_h, int out_w);

void flip_horizontal(Image& img);

Image center_crop(const Image& src, int side);

// ---- P6 PPM ----

/// Reads a binary P6 PPM with maxval 255. Byte b maps to b/255, so 255 is
/// exactly 1.0. Throws std::runtime_error naming the file on malformed input.
Image load_ppm(const std::string& path);
Image decode_ppm(const std::vector<uint8_t>& bytes, const std::string& name);

/// Writes binary P6 (maxval 255); values are clamped then rounded.
void save_ppm(const Image& img, const std::string& path);
std::vector<uint8_t> encode_ppm(const Image& img);

}  // namespace vtpt
