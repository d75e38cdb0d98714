#pragma once

#include <cmath>
#include <cstdint>

namespace hanerf {

// PCG32 generator. Two words of state, trivially serializable into
// checkpoints, and identical output on every platform, which std::mt19937's
// textual round trip does not conveniently give us.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0x853c49e6748fea9bULL, uint64_t stream = 1) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  static Rng from_state(uint64_t state, uint64_t inc) {
    Rng r;
    r.state_ = state;
    r.inc_ = inc;
    return r;
  }

  uint32_t next_u32() {
    uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = static_cast<uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31));
  }

  // Uniform in [0, 1).
  double uniform() { return next_u32() * (1.0 / 4294967296.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  int64_t uniform_int(int64_t n) {
    return static_cast<int64_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Standard normal via Box-Muller. Stateless between calls so the generator
  // state alone captures the stream position.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-12) u1 = 1e-12;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Deterministic child generator, independent of draws made on the parent.
  Rng fork(uint64_t salt) const {
    uint64_t z = state_ ^ (0x9e3779b97f4a7c15ULL * (salt + 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z = z ^ (z >> 31);
    return Rng(z, salt * 2 + 1);
  }

  uint64_t state() const { return state_; }
  uint64_t inc() const { return inc_; }

 private:
  uint64_t state_ = 0;
  uint64_t inc_ = 1;
};

}  // namespace hanerf
