#pragma once

#include <string>
#include <vector>

#include "vtpt/image.hpp"

namespace vtpt {

struct Sample {
  Image image;
  int label = -1;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;

  int class_count() const { return static_cast<int>(class_names.size()); }
  size_t size() const { return samples.size(); }
};

/// Loads either a directory (one subdirectory per class holding P6 PPM files)
/// or a packed binary file, sniffing by filesystem type. Labels follow sorted
/// subdirectory names; file order within a class is sorted by name. Malformed
/// inputs fail naming the offending file.
Dataset ingest_dataset(const std::string& path);

Dataset load_class_dirs(const std::string& dir);

/// Packed layout: "VTPK", u32 count, u32 height, u32 width, u32 label_width
/// (bytes per label, little-endian), then count records of label bytes
/// followed by height*width*3 interleaved RGB bytes (row-major). Byte 255
/// decodes to exactly 1.0.
Dataset load_packed(const std::string& path);
void save_packed(const Dataset& ds, const std::string& path);

/// Deterministic procedural dataset: ten texture families (stripes at three
/// orientations, checkerboard, rings, blobs, quadrants, clouds, crosses, dot
/// grids) with randomized colors, frequencies, phases and positions, plus
/// light pixel noise. Labels cycle 0..9, so classes are balanced.
Dataset synth_dataset(int count, int side, uint64_t seed);

}  // namespace vtpt
