#pragma once

#include <cstdint>
#include <string_view>

namespace dkge {

// FNV-1a; stable across platforms and runs, unlike std::hash.
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001B3ULL;
    }
    return *this;
  }
  Fnv1a& str(std::string_view s) {
    bytes(s.data(), s.size());
    return byte(0xFF);
  }
  Fnv1a& byte(unsigned char b) { return bytes(&b, 1); }
  Fnv1a& u64(std::uint64_t v) { return bytes(&v, sizeof v); }
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Independent stream seed for one purpose ("init", "negatives", ...) of a run.
inline std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view purpose) {
  return splitmix64(run_seed ^ Fnv1a{}.str(purpose).value());
}

}  // namespace dkge
