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

#include <array>
#include <optional>
#include <string_view>
#include <vector>

#include "moat/isa.hpp"
#include "moat/range.hpp"

namespace moat::helpers {

// Argument kinds a helper may declare.
enum class ArgKind {
  MapHandle,    // scalar map id; must be a constant naming a map of map_kind
  Scalar,       // value checked against `expected`
  Ctx,          // the program context pointer
  MemReadable,  // pointer to value_size bytes of the map named by argument 0
  MemWritable,  // pointer to at least umax(argument size_arg) writable bytes
  RingbufMem,   // pointer returned by ringbuf_reserve, at offset 0
};

struct ArgSpec {
  ArgKind kind = ArgKind::Scalar;
  // Expected legitimate range. For MapHandle it is derived from the program's
  // declared maps instead.
  ValueRange expected = ValueRange::full();
  isa::MapKind map_kind = isa::MapKind::Array;
  int size_arg = -1;
  bool must_be_const = false;

  bool is_scalar() const { return kind == ArgKind::MapHandle || kind == ArgKind::Scalar; }
};

enum class RetKind { Scalar, MapValueOrNull, MemOrNull };

struct HelperSignature {
  isa::HelperId id;
  std::vector<ArgSpec> args;  // r1.. in order, at most five
  RetKind ret = RetKind::Scalar;
};

inline constexpr std::uint64_t kIntMax = 0x7fffffff;
// Bounce-buffer size inside skb_load; larger copies overrun it.
inline constexpr std::uint64_t kSkbLoadMaxLen = 0x20;

class SignatureTable {
 public:
  // The registry's shipped signatures.
  static const SignatureTable& standard();

  const HelperSignature& get(isa::HelperId id) const { return sigs_[static_cast<std::size_t>(id)]; }

  // Returns a copy with one argument's expected range replaced. Used to model
  // a helper whose declared expectation differs from its ground truth.
  SignatureTable with_expected(isa::HelperId id, std::size_t arg, ValueRange expected) const;

  // Throws std::logic_error if any Scalar argument lacks a bounded expected
  // range; DPA guard generation relies on this.
  void validate() const;

 private:
  SignatureTable() = default;
  std::array<HelperSignature, std::size(isa::kAllHelpers)> sigs_;
};

}  // namespace moat::helpers
