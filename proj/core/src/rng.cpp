#include "vtpt/rng.hpp"

#include <cmath>

namespace vtpt {

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t hash_bytes(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t Rng::next_u64() {
  return mix64(mix64(mix64(seed) ^ stream) ^ counter++);
}

double Rng::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

uint64_t Rng::next_below(uint64_t n) {
  return n == 0 ? 0 : next_u64() % n;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * next_double();
}

double Rng::normal() {
  double u1 = 1.0 - next_double();  // (0, 1], keeps log() finite
  double u2 = next_double();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

bool Rng::bernoulli(double p) {
  return next_double() < p;
}

Rng Rng::derive(uint64_t seed, std::string_view tag, uint64_t index) {
  Rng r;
  r.seed = seed;
  r.stream = mix64(hash_bytes(tag) + 0x9e3779b97f4a7c15ull * index);
  r.counter = 0;
  return r;
}

}  // namespace vtpt
