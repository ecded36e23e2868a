#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace vtpt {

/// Counter-based pseudo-random generator. A draw is a pure function of
/// (seed, stream, counter), so identical triples give identical sequences on
/// every platform and any draw can be replayed without stepping through the
/// ones before it. The word function is the splitmix64 finalizer applied to
/// the mixed triple.
struct Rng {
  uint64_t seed = 0;
  uint64_t stream = 0;
  uint64_t counter = 0;

  Rng() = default;
  explicit Rng(uint64_t seed_, uint64_t stream_ = 0) : seed(seed_), stream(stream_) {}

  uint64_t next_u64();

  /// Uniform in [0, 1), 53-bit resolution.
  double next_double();

  /// Uniform in [0, n). Plain modulo; bias is < n / 2^64 and irrelevant here.
  uint64_t next_below(uint64_t n);

  double uniform(double lo, double hi);

  /// Standard normal via Box-Muller (two draws per value, no cached spare,
  /// so the counter advances by exactly 2).
  double normal();

  bool bernoulli(double p);

  /// In-place Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Sub-stream derivation: the stream id is a hash of (purpose tag, index),
  /// the run seed is kept. Distinct tags or indices give independent streams.
  static Rng derive(uint64_t seed, std::string_view tag, uint64_t index = 0);
};

/// splitmix64 finalizer, exposed for stream hashing elsewhere.
uint64_t mix64(uint64_t x);

/// FNV-1a over bytes, used for purpose-tag hashing.
uint64_t hash_bytes(std::string_view s);

}  // namespace vtpt
