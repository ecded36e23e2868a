#include "vtpt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "vtpt/rng.hpp"

namespace fs = std::filesystem;

namespace vtpt {

Dataset ingest_dataset(const std::string& path) {
  if (fs::is_directory(path)) return load_class_dirs(path);
  if (fs::is_regular_file(path)) return load_packed(path);
  throw std::runtime_error("dataset: no such file or directory: " + path);
}

Dataset load_class_dirs(const std::string& dir) {
  Dataset ds;
  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty())
    throw std::runtime_error("dataset: " + dir + " has no class subdirectories");
  for (int label = 0; label < static_cast<int>(class_dirs.size()); ++label) {
    ds.class_names.push_back(class_dirs[label]);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(fs::path(dir) / class_dirs[label])) {
      if (!entry.is_regular_file()) continue;
      if (entry.path().extension() == ".ppm") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw std::runtime_error("dataset: class directory " + class_dirs[label] +
                               " has no .ppm images");
    for (const auto& f : files) ds.samples.push_back({load_ppm(f), label});
  }
  return ds;
}

namespace {
constexpr char kPackedMagic[4] = {'V', 'T', 'P', 'K'};
}

Dataset load_packed(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset: cannot open " + path);
  char magic[4];
  uint32_t count = 0, height = 0, width = 0, label_width = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  in.read(reinterpret_cast<char*>(&height), 4);
  in.read(reinterpret_cast<char*>(&width), 4);
  in.read(reinterpret_cast<char*>(&label_width), 4);
  if (!in || std::memcmp(magic, kPackedMagic, 4) != 0)
    throw std::runtime_error("dataset: " + path + ": bad packed header");
  if (height == 0 || width == 0 || height > 4096 || width > 4096)
    throw std::runtime_error("dataset: " + path + ": implausible image size in header");
  if (label_width < 1 || label_width > 8)
    throw std::runtime_error("dataset: " + path + ": label width must be 1..8 bytes");

  size_t record = label_width + static_cast<size_t>(3) * height * width;
  std::streampos payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  size_t payload = static_cast<size_t>(in.tellg() - payload_start);
  if (payload != record * count)
    throw std::runtime_error("dataset: " + path + ": header count " + std::to_string(count) +
                             " does not match payload (" + std::to_string(payload) + " bytes, " +
                             std::to_string(record) + " per record)");
  in.seekg(payload_start);

  Dataset ds;
  int max_label = -1;
  std::vector<uint8_t> buf(record);
  for (uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(record));
    if (!in)
      throw std::runtime_error("dataset: " + path + ": truncated record " + std::to_string(i));
    uint64_t label = 0;
    for (uint32_t b = 0; b < label_width; ++b)
      label |= static_cast<uint64_t>(buf[b]) << (8 * b);
    Sample s;
    s.label = static_cast<int>(label);
    max_label = std::max(max_label, s.label);
    s.image = Image::zeros(static_cast<int>(height), static_cast<int>(width));
    const uint8_t* p = buf.data() + label_width;
    for (uint32_t y = 0; y < height; ++y)
      for (uint32_t x = 0; x < width; ++x)
        for (int c = 0; c < 3; ++c)
          s.image.at(c, static_cast<int>(y), static_cast<int>(x)) =
              static_cast<float>(*p++) / 255.0f;
    ds.samples.push_back(std::move(s));
  }
  for (int c = 0; c <= max_label; ++c) ds.class_names.push_back(std::to_string(c));
  return ds;
}

void save_packed(const Dataset& ds, const std::string& path) {
  if (ds.samples.empty()) throw std::invalid_argument("save_packed: empty dataset");
  uint32_t height = static_cast<uint32_t>(ds.samples[0].image.height);
  uint32_t width = static_cast<uint32_t>(ds.samples[0].image.width);
  uint32_t count = static_cast<uint32_t>(ds.samples.size());
  uint32_t label_width = 2;
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_packed: cannot open " + tmp);
    out.write(kPackedMagic, 4);
    out.write(reinterpret_cast<const char*>(&count), 4);
    out.write(reinterpret_cast<const char*>(&height), 4);
    out.write(reinterpret_cast<const char*>(&width), 4);
    out.write(reinterpret_cast<const char*>(&label_width), 4);
    for (const auto& s : ds.samples) {
      if (s.image.height != static_cast<int>(height) || s.image.width != static_cast<int>(width))
        throw std::invalid_argument("save_packed: mixed image sizes");
      uint8_t label[2] = {static_cast<uint8_t>(s.label & 0xff),
                          static_cast<uint8_t>((s.label >> 8) & 0xff)};
      out.write(reinterpret_cast<const char*>(label), 2);
      for (uint32_t y = 0; y < height; ++y)
        for (uint32_t x = 0; x < width; ++x)
          for (int c = 0; c < 3; ++c) {
            float v = std::min(1.0f, std::max(0.0f, s.image.at(c, y, x)));
            uint8_t b = static_cast<uint8_t>(std::lround(v * 255.0f));
            out.write(reinterpret_cast<const char*>(&b), 1);
          }
    }
    if (!out) throw std::runtime_error("save_packed: write failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("save_packed: rename failed for " + path);
}

// ---------------------------------------------------------------- synthetic

namespace {

struct Color {
  float r, g, b;
};

Color random_color(Rng& rng) {
  return {static_cast<float>(rng.next_double()), static_cast<float>(rng.next_double()),
          static_cast<float>(rng.next_double())};
}

float color_dist2(const Color& a, const Color& b) {
  float dr = a.r - b.r, dg = a.g - b.g, db = a.b - b.b;
  return dr * dr + dg * dg + db * db;
}

std::pair<Color, Color> contrasting_pair(Rng& rng) {
  Color a = random_color(rng), b = random_color(rng);
  while (color_dist2(a, b) < 0.25f) b = random_color(rng);
  return {a, b};
}

void paint(Image& img, int y, int x, const Color& c0, const Color& c1, float t) {
  img.at(0, y, x) = c0.r + (c1.r - c0.r) * t;
  img.at(1, y, x) = c0.g + (c1.g - c0.g) * t;
  img.at(2, y, x) = c0.b + (c1.b - c0.b) * t;
}

Image synth_image(int side, int family, Rng& rng) {
  Image img = Image::zeros(side, side);
  auto [c0, c1] = contrasting_pair(rng);
  switch (family) {
    case 0:    // horizontal stripes
    case 1:    // vertical stripes
    case 2: {  // diagonal stripes
      double period = rng.uniform(4.0, 10.0);
      double phase = rng.uniform(0.0, 2.0 * M_PI);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          double u = family == 0 ? y : family == 1 ? x : (x + y) * 0.70710678;
          float t = 0.5f + 0.5f * static_cast<float>(std::sin(2.0 * M_PI * u / period + phase));
          paint(img, y, x, c0, c1, t);
        }
      break;
    }
    case 3: {  // checkerboard
      int cell = 3 + static_cast<int>(rng.next_below(6));
      int oy = static_cast<int>(rng.next_below(static_cast<uint64_t>(cell)));
      int ox = static_cast<int>(rng.next_below(static_cast<uint64_t>(cell)));
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          bool on = (((y + oy) / cell) + ((x + ox) / cell)) % 2 == 0;
          paint(img, y, x, c0, c1, on ? 1.0f : 0.0f);
        }
      break;
    }
    case 4: {  // concentric rings
      double cy = rng.uniform(side * 0.3, side * 0.7);
      double cx = rng.uniform(side * 0.3, side * 0.7);
      double period = rng.uniform(4.0, 9.0);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          double r = std::hypot(y - cy, x - cx);
          float t = 0.5f + 0.5f * static_cast<float>(std::sin(2.0 * M_PI * r / period));
          paint(img, y, x, c0, c1, t);
        }
      break;
    }
    case 5: {  // single soft blob
      double cy = rng.uniform(side * 0.25, side * 0.75);
      double cx = rng.uniform(side * 0.25, side * 0.75);
      double radius = rng.uniform(side * 0.18, side * 0.35);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          double r = std::hypot(y - cy, x - cx) / radius;
          float t = static_cast<float>(std::exp(-r * r));
          paint(img, y, x, c0, c1, t);
        }
      break;
    }
    case 6: {  // quadrant split
      int sy = side / 2 + static_cast<int>(rng.next_below(side / 4)) - side / 8;
      int sx = side / 2 + static_cast<int>(rng.next_below(side / 4)) - side / 8;
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          bool on = (y < sy) == (x < sx);
          paint(img, y, x, c0, c1, on ? 1.0f : 0.0f);
        }
      break;
    }
    case 7: {  // cloudy low-frequency field
      double fy1 = rng.uniform(0.05, 0.15), fx1 = rng.uniform(0.05, 0.15);
      double fy2 = rng.uniform(0.1, 0.25), fx2 = rng.uniform(0.1, 0.25);
      double p1 = rng.uniform(0.0, 2.0 * M_PI), p2 = rng.uniform(0.0, 2.0 * M_PI);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          double v = std::sin(2.0 * M_PI * (fy1 * y + fx1 * x) + p1) +
                     std::sin(2.0 * M_PI * (fy2 * y - fx2 * x) + p2);
          paint(img, y, x, c0, c1, 0.5f + 0.25f * static_cast<float>(v));
        }
      break;
    }
    case 8: {  // cross of two bars
      int thickness = 2 + static_cast<int>(rng.next_below(3));
      int by = thickness + static_cast<int>(rng.next_below(
                               static_cast<uint64_t>(side - 2 * thickness)));
      int bx = thickness + static_cast<int>(rng.next_below(
                               static_cast<uint64_t>(side - 2 * thickness)));
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          bool on = std::abs(y - by) <= thickness || std::abs(x - bx) <= thickness;
          paint(img, y, x, c0, c1, on ? 1.0f : 0.0f);
        }
      break;
    }
    default: {  // 9: dot grid
      int spacing = 5 + static_cast<int>(rng.next_below(4));
      int oy = static_cast<int>(rng.next_below(static_cast<uint64_t>(spacing)));
      int ox = static_cast<int>(rng.next_below(static_cast<uint64_t>(spacing)));
      double radius = rng.uniform(1.2, 2.2);
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
          int my = (y + oy) % spacing, mx = (x + ox) % spacing;
          double dy = std::min(my, spacing - my), dx = std::min(mx, spacing - mx);
          bool on = std::hypot(dy, dx) <= radius;
          paint(img, y, x, c0, c1, on ? 1.0f : 0.0f);
        }
      break;
    }
  }
  for (float& v : img.data)
    v = std::min(1.0f, std::max(0.0f, v + static_cast<float>(rng.uniform(-0.03, 0.03))));
  return img;
}

}  // namespace

Dataset synth_dataset(int count, int side, uint64_t seed) {
  if (count < 1 || side < 8) throw std::invalid_argument("synth_dataset: bad count or side");
  Dataset ds;
  for (int c = 0; c < 10; ++c) ds.class_names.push_back("class" + std::to_string(c));
  ds.samples.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::derive(seed, "synth", static_cast<uint64_t>(i));
    int family = i % 10;
    ds.samples.push_back({synth_image(side, family, rng), family});
  }
  return ds;
}

}  // namespace vtpt
