// Copyright 2026 The moatsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>

namespace moat {

// Unsigned interval over 64-bit values plus the interval of the low 32 bits.
// Wrapping intervals are not representable; anything that could wrap is
// widened to the full range.
struct ValueRange {
  static constexpr std::uint64_t kMax64 = std::numeric_limits<std::uint64_t>::max();
  static constexpr std::uint32_t kMax32 = std::numeric_limits<std::uint32_t>::max();

  std::uint64_t umin = 0;
  std::uint64_t umax = kMax64;
  std::uint32_t u32min = 0;
  std::uint32_t u32max = kMax32;

  static constexpr ValueRange full() { return {}; }
  static constexpr ValueRange point(std::uint64_t v) { return from_u64(v, v); }

  // The low-32 interval is exact only when both ends share their upper half.
  static constexpr ValueRange from_u64(std::uint64_t lo, std::uint64_t hi) {
    ValueRange r{lo, hi, 0, kMax32};
    if ((lo >> 32) == (hi >> 32)) {
      r.u32min = static_cast<std::uint32_t>(lo);
      r.u32max = static_cast<std::uint32_t>(hi);
    }
    return r;
  }

  // Zero-extended result of a 32-bit operation.
  static constexpr ValueRange from_u32(std::uint32_t lo, std::uint32_t hi) { return {lo, hi, lo, hi}; }

  constexpr bool is_point() const { return umin == umax; }
  constexpr bool contains(std::uint64_t v) const {
    const auto lo = static_cast<std::uint32_t>(v);
    return v >= umin && v <= umax && lo >= u32min && lo <= u32max;
  }
  constexpr bool within(const ValueRange& outer) const { return umin >= outer.umin && umax <= outer.umax; }
  constexpr bool spans_32bit_boundary() const { return (umin >> 32) != (umax >> 32); }

  constexpr ValueRange hull(const ValueRange& o) const {
    return {std::min(umin, o.umin), std::max(umax, o.umax), std::min(u32min, o.u32min),
            std::max(u32max, o.u32max)};
  }

  friend constexpr bool operator==(const ValueRange&, const ValueRange&) = default;

  std::string to_string() const;
};

}  // namespace moat
