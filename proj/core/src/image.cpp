#include "vtpt/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace vtpt {

Image Image::zeros(int height, int width) {
  if (height <= 0 || width <= 0)
    throw std::invalid_argument("image: non-positive dimensions");
  Image img;
  img.height = height;
  img.width = width;
  img.data.assign(static_cast<size_t>(3) * height * width, 0.0f);
  return img;
}

void clamp01(Image& img) {
  for (float& v : img.data) v = std::min(1.0f, std::max(0.0f, v));
}

float max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_geometry(b))
    throw std::invalid_argument("max_abs_diff: geometry mismatch");
  float m = 0.0f;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

Image rescale_bilinear(const Image& src, const CropRect& crop, int out_h, int out_w) {
  if (crop.h <= 0 || crop.w <= 0 || crop.y0 < 0 || crop.x0 < 0 ||
      crop.y0 + crop.h > src.height || crop.x0 + crop.w > src.width)
    throw std::invalid_argument("rescale: crop rectangle outside the image");
  if (out_h <= 0 || out_w <= 0)
    throw std::invalid_argument("rescale: non-positive output size");
  Image out = Image::zeros(out_h, out_w);
  double sy = static_cast<double>(crop.h) / out_h;
  double sx = static_cast<double>(crop.w) / out_w;
  double cy = crop.y0 + crop.h / 2.0, cx = crop.x0 + crop.w / 2.0;
  double oy = out_h / 2.0, ox = out_w / 2.0;
  for (int y = 0; y < out_h; ++y) {
    double fy = cy + (y - oy) * sy;
    fy = std::min(std::max(fy, static_cast<double>(crop.y0)),
                  static_cast<double>(crop.y0 + crop.h - 1));
    int y0 = static_cast<int>(std::floor(fy));
    int y1 = std::min(y0 + 1, crop.y0 + crop.h - 1);
    float wy = static_cast<float>(fy - y0);
    for (int x = 0; x < out_w; ++x) {
      double fx = cx + (x - ox) * sx;
      fx = std::min(std::max(fx, static_cast<double>(crop.x0)),
                    static_cast<double>(crop.x0 + crop.w - 1));
      int x0 = static_cast<int>(std::floor(fx));
      int x1 = std::min(x0 + 1, crop.x0 + crop.w - 1);
      float wx = static_cast<float>(fx - x0);
      for (int c = 0; c < 3; ++c) {
        float top = (1.0f - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1);
        float bot = (1.0f - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1);
        out.at(c, y, x) = (1.0f - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

Image rescale_bilinear(const Image& src, int out_h, int out_w) {
  return rescale_bilinear(src, CropRect{0, 0, src.height, src.width}, out_h, out_w);
}

void flip_horizontal(Image& img) {
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width / 2; ++x)
        std::swap(img.at(c, y, x), img.at(c, y, img.width - 1 - x));
}

Image center_crop(const Image& src, int side) {
  if (side > src.height || side > src.width)
    throw std::invalid_argument("center_crop: side larger than image");
  int y0 = (src.height - side) / 2, x0 = (src.width - side) / 2;
  Image out = Image::zeros(side, side);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x) out.at(c, y, x) = src.at(c, y0 + y, x0 + x);
  return out;
}

// ---- PPM ----

namespace {

void fail(const std::string& name, const std::string& why) {
  throw std::runtime_error("ppm " + name + ": " + why);
}

// Skips whitespace and '#' comments, then parses a base-10 integer.
int parse_int(const std::vector<uint8_t>& b, size_t& pos, const std::string& name) {
  for (;;) {
    while (pos < b.size() && std::isspace(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= b.size() || !std::isdigit(b[pos])) fail(name, "expected integer in header");
  long v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos] - '0');
    if (v > 1 << 24) fail(name, "header value out of range");
    ++pos;
  }
  return static_cast<int>(v);
}

}  // namespace

Image decode_ppm(const std::vector<uint8_t>& bytes, const std::string& name) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') fail(name, "not a P6 file");
  size_t pos = 2;
  int w = parse_int(bytes, pos, name);
  int h = parse_int(bytes, pos, name);
  int maxval = parse_int(bytes, pos, name);
  if (w <= 0 || h <= 0) fail(name, "non-positive dimensions");
  if (maxval != 255) fail(name, "unsupported maxval (must be 255)");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail(name, "missing raster separator");
  ++pos;
  size_t need = static_cast<size_t>(3) * w * h;
  if (bytes.size() - pos < need) fail(name, "truncated raster");
  Image img = Image::zeros(h, w);
  const uint8_t* p = bytes.data() + pos;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<float>(*p++) / 255.0f;
  return img;
}

Image load_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return decode_ppm(bytes, path);
}

std::vector<uint8_t> encode_ppm(const Image& img) {
  char header[64];
  int n = std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", img.width, img.height);
  std::vector<uint8_t> out(header, header + n);
  out.reserve(out.size() + static_cast<size_t>(3) * img.width * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = std::min(1.0f, std::max(0.0f, img.at(c, y, x)));
        out.push_back(static_cast<uint8_t>(std::lround(v * 255.0f)));
      }
  return out;
}

void save_ppm(const Image& img, const std::string& path) {
  std::vector<uint8_t> bytes = encode_ppm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(path, "cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(path, "write failed");
}

}  // namespace vtpt
