#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mtrc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct AlignmentError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct TrainingError : Error {
  using Error::Error;
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic RNG. The engine is the standardized mt19937_64; the
// distributions are implemented here so that streams are bit-stable across
// standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw ConfigError("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
    return lo + static_cast<int>(next_u64() % span);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    double u2 = uniform();
    double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(6.283185307179586 * u2);
    has_spare_ = true;
    return mag * std::cos(6.283185307179586 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Independent derived stream; used for per-video / per-stage seeding.
  Rng fork(uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ (0xd1342543de82ef95ULL * (stream + 1))));
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(uint64_t v);

}  // namespace mtrc
