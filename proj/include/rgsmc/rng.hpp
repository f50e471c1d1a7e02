#pragma once

// Counter-based random streams. Every random draw in the engine is a pure
// function of (seed, stream key, position), so results do not depend on
// how work is scheduled across threads.

#include <array>
#include <cstdint>
#include <limits>

namespace rgsmc {

/// What a stream is used for. Part of the stream key so that streams for
/// different purposes never overlap even with equal indices.
enum class Purpose : std::uint32_t {
  kPropagate = 1,
  kLookahead = 2,
  kResample = 3,
  kMhProposal = 4,
  kMhLookahead = 5,
  kMhAccept = 6,
  kFixture = 7,
  kTest = 8,
};

/// Philox4x32-10 block function (Salmon et al., Random123).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kM0 = 0xD2511F53u;
  constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  constexpr std::uint32_t kW0 = 0x9E3779B9u;
  constexpr std::uint32_t kW1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
           static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
           static_cast<std::uint32_t>(p0)};
    key[0] += kW0;
    key[1] += kW1;
  }
  return ctr;
}

/// splitmix64 finalizer, used to fold stream coordinates into one word.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ mix64(b + 0x632BE59BD9B4E019ull));
}

/// A random stream addressed by (seed, purpose, a, b, c). Position n of the
/// stream is Philox(counter = (n, stream-id), key = seed). Satisfies
/// UniformRandomBitGenerator; each operator() call consumes one position.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, Purpose purpose, std::uint64_t a = 0, std::uint64_t b = 0,
             std::uint64_t c = 0)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_(mix64(mix64(mix64(static_cast<std::uint64_t>(purpose), a), b), c)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const auto out = philox4x32({static_cast<std::uint32_t>(position_),
                                 static_cast<std::uint32_t>(position_ >> 32),
                                 static_cast<std::uint32_t>(stream_),
                                 static_cast<std::uint32_t>(stream_ >> 32)},
                                key_);
    ++position_;
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
  }

  /// Uniform double in [0, 1) with 53 random bits; consumes one position.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  std::uint64_t position() const { return position_; }
  void seek(std::uint64_t position) { position_ = position; }

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
  std::uint64_t position_ = 0;
};

}  // namespace rgsmc
