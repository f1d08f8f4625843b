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
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "moat/isa.hpp"
#include "moat/range.hpp"
#include "moat/signature.hpp"

namespace moat::verifier {

inline constexpr std::int64_t kStackSize = 512;
// Context layout seen by socket filters: a read-only packet page followed by
// a small writable window of mirrored nested fields.
inline constexpr std::int64_t kCtxPacketBytes = 4096;
inline constexpr std::int64_t kCtxMirrorBytes = 16;
inline constexpr std::int64_t kCtxSize = kCtxPacketBytes + kCtxMirrorBytes;
// Tracepoint contexts are copied to the bottom of the BPF stack.
inline constexpr std::int64_t kTracepointCtxBytes = 64;

// Signed offset interval of a pointer relative to its object.
struct OffsetRange {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  friend bool operator==(const OffsetRange&, const OffsetRange&) = default;
};

enum class Kind {
  Uninit,
  Scalar,
  StackAddr,       // relative to r10
  MapValueAddr,    // into a map value or ringbuf reservation of region_size bytes
  CtxAddr,
  MapValueOrNull,  // map_lookup result before the null test
  MemOrNull,       // ringbuf_reserve result before the null test
};

struct AbstractValue {
  Kind kind = Kind::Uninit;
  ValueRange range;  // Scalar only
  OffsetRange off;   // address kinds
  int map = -1;
  std::uint64_t region_size = 0;
  int null_id = 0;   // shared by copies of one nullable result

  static AbstractValue uninit() { return {}; }
  static AbstractValue scalar(ValueRange r) {
    AbstractValue v;
    v.kind = Kind::Scalar;
    v.range = r;
    return v;
  }
  bool is_pointer() const { return kind != Kind::Uninit && kind != Kind::Scalar; }
  bool is_nullable() const { return kind == Kind::MapValueOrNull || kind == Kind::MemOrNull; }

  friend bool operator==(const AbstractValue&, const AbstractValue&) = default;
  std::string to_string() const;
};

using RegisterFile = std::array<AbstractValue, isa::kNumRegisters>;

// Injectable unsound transfer functions, one per modeled verifier bug.
struct BugFlags {
  bool or32_truncation = false;
  bool mem_or_null_untracked = false;
  bool helper_map_mischeck = false;

  bool any() const { return or32_truncation || mem_or_null_untracked || helper_map_mischeck; }
  friend bool operator==(const BugFlags&, const BugFlags&) = default;
};

enum class RejectKind {
  TooLarge,
  BackEdge,
  Unreachable,
  BadJumpTarget,
  OobStack,
  OobMapValue,
  OobCtx,
  BadAccess,
  BadHelperArg,
  UninitRead,
  UnboundedAddrArith,
  BadReturn,
};

std::string_view reject_kind_name(RejectKind k);

struct Reject {
  RejectKind kind;
  std::size_t at = 0;
  std::string detail;

  std::string to_string() const;
};

struct ArgRange {
  int reg;
  ValueRange range;
};

struct Callsite {
  std::size_t insn = 0;
  isa::HelperId helper = isa::HelperId::MapLookup;
  std::vector<ArgRange> args;  // Scalar-kind arguments only
};

struct VerifierOutput {
  bool accepted = false;
  std::optional<Reject> reject;
  std::map<std::size_t, Callsite> callsites;  // keyed by CALL instruction index
  std::int64_t max_stack_depth = 0;
  // Register state on entry to each instruction; nullopt where no feasible
  // path reaches it.
  std::vector<std::optional<RegisterFile>> states;

  std::optional<std::string> reject_reason() const {
    if (!reject) return std::nullopt;
    return reject->to_string();
  }
};

std::optional<Reject> check_cfg(const isa::Program& prog);

VerifierOutput track(const isa::Program& prog, const BugFlags& flags,
                     const helpers::SignatureTable& sigs = helpers::SignatureTable::standard());

VerifierOutput verify(const isa::Program& prog, const BugFlags& flags = {},
                      const helpers::SignatureTable& sigs = helpers::SignatureTable::standard());

// Transfer functions, exposed for unit tests.
ValueRange alu_range(isa::Opcode op, const ValueRange& dst, const ValueRange& src, bool src_is_imm,
                     const BugFlags& flags);

struct Refined {
  std::optional<ValueRange> lhs;  // nullopt: branch infeasible
  ValueRange rhs;
};
Refined refine(isa::Opcode op, bool taken, const ValueRange& lhs, const ValueRange& rhs);

}  // namespace moat::verifier
