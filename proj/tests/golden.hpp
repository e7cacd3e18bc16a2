#pragma once

#include <bit>
#include <cstdint>
#include <vector>

#include "wdsc/bytes.hpp"
#include "wdsc/tensor.hpp"

namespace wdsc::testing {

// FNV-1a-64 over the IEEE bit patterns of a float tensor.
inline std::uint64_t float_fingerprint(const Tensor<float>& t) {
  std::vector<std::uint8_t> bytes;
  for (float v : t.data()) {
    const auto u = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i) bytes.push_back(std::uint8_t(u >> (8 * i)));
  }
  return fnv1a64(bytes);
}

}  // namespace wdsc::testing
