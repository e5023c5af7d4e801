#pragma once

#include "blobbench/bytes.hpp"
#include "blobbench/rng.hpp"

namespace blobbench::testing {

inline Bytes random_bytes(std::size_t n, std::uint64_t seed) {
  Bytes out(n);
  Rng rng(seed);
  for (auto& b : out) b = static_cast<std::byte>(rng.next() & 0xff);
  return out;
}

}  // namespace blobbench::testing
