#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace dsnerv {

// ---------------------------------------------------------------------------
// Error types. Every throwing operation documents which of these it raises.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error { using Error::Error; };
struct IndexOutOfRange : Error { using Error::Error; };
struct DegenerateTimeline : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };
struct NonFiniteGradient : Error { using Error::Error; };
struct NonFiniteInput : Error { using Error::Error; };
struct EmptyMask : Error { using Error::Error; };
struct MaskTooLarge : Error { using Error::Error; };
struct TooSmall : Error { using Error::Error; };
struct CorruptStream : Error { using Error::Error; };
struct Corrupt : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct ConfigMismatch : Error { using Error::Error; };
struct SpecMismatch : Error { using Error::Error; };
struct IoFailure : Error { using Error::Error; };
struct EmptyDirectory : Error { using Error::Error; };
struct InconsistentResolution : Error { using Error::Error; };
struct UnreadableFile : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Deterministic RNG. xoshiro256** seeded via splitmix64, with a Box-Muller
// normal sampler. Self-contained so that seeded runs reproduce across
// standard library implementations.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) {
      x += 0x9e3779b97f4a7c15ull;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      word = z ^ (z >> 31);
    }
    has_spare_ = false;
    spare_ = 0.0;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Quantization parameters attached to a tensor whose values lie exactly on an
// affine grid (set when a model comes out of a bitstream, so that
// re-compression reproduces identical bytes).
struct QuantHint {
  double minimum = 0.0;
  double scale = 1.0;
  int bits = 0;
};

}  // namespace dsnerv
