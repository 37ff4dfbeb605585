#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace skyflow {

// Error taxonomy mirrored by the CLI exit codes: config/usage -> 2,
// violated operation precondition -> 3, numeric failure -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

struct Vec2f {
  float x = 0.f;
  float y = 0.f;

  friend Vec2f operator+(Vec2f a, Vec2f b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2f operator-(Vec2f a, Vec2f b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2f operator*(Vec2f a, float s) { return {a.x * s, a.y * s}; }
  friend Vec2f operator-(Vec2f a) { return {-a.x, -a.y}; }
  friend bool operator==(Vec2f a, Vec2f b) { return a.x == b.x && a.y == b.y; }

  float norm() const { return std::sqrt(x * x + y * y); }
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic PRNG. All stochastic pieces of the pipeline (weight init,
// synthetic scenes, test probes) draw from this so that a fixed seed gives
// bit-identical results on every run and platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    state_ = splitmix64(seed + 0x632be59bd9b4e019ULL);
    if (state_ == 0) state_ = 0x9e3779b97f4a7c15ULL;
  }

  uint64_t next_u64() {
    // xorshift64*, seeded through splitmix64
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545f4914f6cdd1dULL;
  }

  // uniform in [0, 1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller, one spare cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline constexpr double kPi = 3.14159265358979323846;

}  // namespace skyflow
