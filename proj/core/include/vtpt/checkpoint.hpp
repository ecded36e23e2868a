#pragma once

#include <map>
#include <string>

#include "vtpt/tensor.hpp"

namespace vtpt {

/// Versioned parameter container. Layout:
///   "VTPT"  u32 version  u64 header_bytes  header-text  payload
/// The header is line-based ASCII: `config k=v`, `meta k=v`, then one
/// `tensor <name> <d0>x<d1>... <byte-offset> <count>` per tensor in manifest
/// order, terminated by `end`. The payload is the tensors' raw little-endian
/// 32-bit floats at the stated offsets, which must be ascending, adjacent and
/// exhaustive. Save/load round-trips are bit-exact.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::map<std::string, std::string> config;
  std::map<std::string, std::string> meta;
  ParamSet<float> tensors;

  /// Atomic write (temp file + rename).
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

  int64_t meta_int(const std::string& key, int64_t fallback) const;
};

}  // namespace vtpt
