#include <algorithm>
#include <numeric>
#include <set>
#include <vector>

#include "doctest.h"
#include "rgsmc/rng.hpp"

using namespace rgsmc;

TEST_CASE("philox4x32-10 known-answer vectors") {
  using A4 = std::array<std::uint32_t, 4>;
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  CHECK(philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
        A4{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  CHECK(philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
        A4{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams are pure functions of their key and position") {
  CounterRng a(42, Purpose::kPropagate, 3, 1);
  CounterRng b(42, Purpose::kPropagate, 3, 1);
  std::vector<std::uint64_t> xs, ys;
  for (int i = 0; i < 16; ++i) xs.push_back(a());
  b.seek(8);
  for (int i = 8; i < 16; ++i) ys.push_back(b());
  CHECK(std::equal(ys.begin(), ys.end(), xs.begin() + 8));
  CHECK(a.position() == 16);
}

TEST_CASE("different keys give different streams") {
  std::set<std::uint64_t> first;
  for (std::uint64_t seed : {0ull, 1ull}) {
    for (auto p : {Purpose::kPropagate, Purpose::kLookahead, Purpose::kResample}) {
      for (std::uint64_t a = 0; a < 4; ++a) {
        for (std::uint64_t b = 0; b < 4; ++b) first.insert(CounterRng(seed, p, a, b)());
      }
    }
  }
  CHECK(first.size() == 2 * 3 * 16);
}

TEST_CASE("uniforms lie in [0, 1) with the right mean") {
  CounterRng r(7, Purpose::kTest);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  // sd of the mean is sqrt(1/12 / n) ~ 6.5e-4
  CHECK(std::abs(sum / n - 0.5) < 4 * 6.5e-4);
}

TEST_CASE("works as a standard URBG") {
  std::vector<int> v(20);
  std::iota(v.begin(), v.end(), 0);
  CounterRng r(1, Purpose::kTest);
  std::shuffle(v.begin(), v.end(), r);
  CHECK(std::is_permutation(v.begin(), v.end(), std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10,
                                                                 11, 12, 13, 14, 15, 16, 17, 18, 19}.begin()));
}
