#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fairlens {

// Platform-stable 64-bit hash (FNV-1a followed by a splitmix64 finalizer).
std::uint64_t stable_hash(std::string_view data);
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);

// Maps a hash to [0, 1) using its top 53 bits.
double unit_interval(std::uint64_t h);

// Seeded generator whose bounded draws are identical on every standard
// library; std::uniform_int_distribution is implementation-defined.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  std::size_t uniform_index(std::size_t n);
  double uniform01() { return unit_interval(engine_()); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace fairlens
