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

#include "moat/verifier.hpp"

#include <bitset>
#include <utility>

#include <fmt/format.h>

namespace moat {

std::string ValueRange::to_string() const {
  return fmt::format("[{:#x}, {:#x}]", umin, umax);
}

namespace verifier {

using isa::Instruction;
using isa::OpClass;
using isa::Opcode;
using isa::Program;

namespace {

constexpr std::uint64_t kMask32 = 0xffffffffULL;
// Largest scalar magnitude that may be added to a pointer.
constexpr std::uint64_t kMaxPtrDelta = std::uint64_t{1} << 62;

std::uint64_t mask_up(std::uint64_t x) {
  x |= x >> 1;
  x |= x >> 2;
  x |= x >> 4;
  x |= x >> 8;
  x |= x >> 16;
  x |= x >> 32;
  return x;
}

ValueRange trunc32(const ValueRange& r) { return ValueRange::from_u32(r.u32min, r.u32max); }

ValueRange point32(std::uint64_t v) {
  const auto t = static_cast<std::uint32_t>(v);
  return ValueRange::from_u32(t, t);
}

}  // namespace

ValueRange alu_range(Opcode op, const ValueRange& a, const ValueRange& b, bool src_is_imm,
                     const BugFlags& flags) {
  const bool points = a.is_point() && b.is_point();
  switch (op) {
    case Opcode::Mov:
      return b;
    case Opcode::Add:
      if (points) return ValueRange::point(a.umin + b.umin);
      if (a.umax > ValueRange::kMax64 - b.umax) return ValueRange::full();
      return ValueRange::from_u64(a.umin + b.umin, a.umax + b.umax);
    case Opcode::Sub:
      if (points) return ValueRange::point(a.umin - b.umin);
      if (a.umin < b.umax) return ValueRange::full();
      return ValueRange::from_u64(a.umin - b.umax, a.umax - b.umin);
    case Opcode::Mul:
      if (points) return ValueRange::point(a.umin * b.umin);
      if ((a.is_point() && a.umin == 0) || (b.is_point() && b.umin == 0)) return ValueRange::point(0);
      if (a.umax != 0 && b.umax > ValueRange::kMax64 / a.umax) return ValueRange::full();
      return ValueRange::from_u64(a.umin * b.umin, a.umax * b.umax);
    case Opcode::And:
      if (points) return ValueRange::point(a.umin & b.umin);
      return ValueRange::from_u64(0, std::min(a.umax, b.umax));
    case Opcode::Or:
      if (flags.or32_truncation && src_is_imm && a.spans_32bit_boundary())
        return ValueRange::point((a.umin & kMask32) | b.umin);
      if (points) return ValueRange::point(a.umin | b.umin);
      return ValueRange::from_u64(std::max(a.umin, b.umin), mask_up(a.umax | b.umax));
    case Opcode::Lsh: {
      if (!b.is_point()) return ValueRange::full();
      const auto s = b.umin & 63;
      if (a.umax > (ValueRange::kMax64 >> s)) return ValueRange::full();
      return ValueRange::from_u64(a.umin << s, a.umax << s);
    }
    case Opcode::Rsh: {
      if (!b.is_point()) return ValueRange::full();
      const auto s = b.umin & 63;
      return ValueRange::from_u64(a.umin >> s, a.umax >> s);
    }
    case Opcode::Mov32:
      return trunc32(b);
    case Opcode::Or32: {
      // The unsound variant derives the low-32 bounds by masking the 64-bit
      // bounds even when the interval crosses a 4 GiB boundary.
      if (flags.or32_truncation && src_is_imm && a.spans_32bit_boundary())
        return point32((a.umin & kMask32) | (b.umin & kMask32));
      const auto at = trunc32(a), bt = trunc32(b);
      if (at.is_point() && bt.is_point()) return point32(at.umin | bt.umin);
      return ValueRange::from_u32(static_cast<std::uint32_t>(std::max(at.umin, bt.umin)),
                                  static_cast<std::uint32_t>(mask_up(at.umax | bt.umax)));
    }
    case Opcode::Mod32: {
      const auto at = trunc32(a), bt = trunc32(b);
      if (at.is_point() && bt.is_point()) return point32(bt.umin ? at.umin % bt.umin : at.umin);
      if (at.umax < bt.umin) return at;
      if (bt.umin > 0)
        return ValueRange::from_u32(0, static_cast<std::uint32_t>(std::min(at.umax, bt.umax - 1)));
      // Divisor may be zero, which leaves the truncated dividend.
      return ValueRange::from_u32(0, static_cast<std::uint32_t>(at.umax));
    }
    default:
      break;
  }
  return ValueRange::full();
}

Refined refine(Opcode op, bool taken, const ValueRange& a, const ValueRange& b) {
  enum Cond { Eq, Ne, Gt, Ge, Lt, Le } c{};
  switch (op) {
    case Opcode::Jeq: c = taken ? Eq : Ne; break;
    case Opcode::Jne: c = taken ? Ne : Eq; break;
    case Opcode::Jgt: c = taken ? Gt : Le; break;
    case Opcode::Jge: c = taken ? Ge : Lt; break;
    case Opcode::Jlt: c = taken ? Lt : Ge; break;
    case Opcode::Jle: c = taken ? Le : Gt; break;
    default: return {a, b};
  }
  std::uint64_t alo = a.umin, ahi = a.umax, blo = b.umin, bhi = b.umax;
  const Refined infeasible{std::nullopt, b};
  switch (c) {
    case Eq:
      alo = blo = std::max(alo, blo);
      ahi = bhi = std::min(ahi, bhi);
      break;
    case Ne:
      if (a.is_point() && b.is_point() && a.umin == b.umin) return infeasible;
      if (b.is_point()) {
        if (alo == blo) ++alo;
        else if (ahi == blo) --ahi;
      } else if (a.is_point()) {
        if (blo == alo) ++blo;
        else if (bhi == alo) --bhi;
      }
      break;
    case Gt:
      if (blo == ValueRange::kMax64 || ahi == 0) return infeasible;
      alo = std::max(alo, blo + 1);
      bhi = std::min(bhi, ahi - 1);
      break;
    case Ge:
      alo = std::max(alo, blo);
      bhi = std::min(bhi, ahi);
      break;
    case Lt:
      if (alo == ValueRange::kMax64 || bhi == 0) return infeasible;
      ahi = std::min(ahi, bhi - 1);
      blo = std::max(blo, alo + 1);
      break;
    case Le:
      ahi = std::min(ahi, bhi);
      blo = std::max(blo, alo);
      break;
  }
  if (alo > ahi || blo > bhi) return infeasible;
  return {ValueRange::from_u64(alo, ahi), ValueRange::from_u64(blo, bhi)};
}

std::string_view reject_kind_name(RejectKind k) {
  switch (k) {
    case RejectKind::TooLarge: return "TooLarge";
    case RejectKind::BackEdge: return "BackEdge";
    case RejectKind::Unreachable: return "Unreachable";
    case RejectKind::BadJumpTarget: return "BadJumpTarget";
    case RejectKind::OobStack: return "OobStack";
    case RejectKind::OobMapValue: return "OobMapValue";
    case RejectKind::OobCtx: return "OobCtx";
    case RejectKind::BadAccess: return "BadAccess";
    case RejectKind::BadHelperArg: return "BadHelperArg";
    case RejectKind::UninitRead: return "UninitRead";
    case RejectKind::UnboundedAddrArith: return "UnboundedAddrArith";
    case RejectKind::BadReturn: return "BadReturn";
  }
  return "?";
}

std::string Reject::to_string() const {
  if (detail.empty()) return fmt::format("{} at insn {}", reject_kind_name(kind), at);
  return fmt::format("{} at insn {}: {}", reject_kind_name(kind), at, detail);
}

std::string AbstractValue::to_string() const {
  switch (kind) {
    case Kind::Uninit: return "uninit";
    case Kind::Scalar: return fmt::format("scalar{}", range.to_string());
    case Kind::StackAddr: return fmt::format("fp[{}, {}]", off.lo, off.hi);
    case Kind::MapValueAddr: return fmt::format("map{}_value[{}, {}]/{}", map, off.lo, off.hi, region_size);
    case Kind::CtxAddr: return fmt::format("ctx[{}, {}]", off.lo, off.hi);
    case Kind::MapValueOrNull: return fmt::format("map{}_value_or_null#{}", map, null_id);
    case Kind::MemOrNull: return fmt::format("mem_or_null#{}", null_id);
  }
  return "?";
}

// ---------------------------------------------------------------------------
// CFG

namespace {

std::vector<std::size_t> successors(const Program& prog, std::size_t pc) {
  const auto& i = prog.insns[pc];
  switch (i.cls()) {
    case OpClass::Exit: return {};
    case OpClass::Jump: return {static_cast<std::size_t>(i.target(pc))};
    case OpClass::CondJump: return {pc + 1, static_cast<std::size_t>(i.target(pc))};
    default: return {pc + 1};
  }
}

// Reverse post-order of the (acyclic) CFG from instruction 0.
std::vector<std::size_t> topo_order(const Program& prog) {
  const auto n = prog.insns.size();
  std::vector<bool> seen(n, false);
  std::vector<std::size_t> post;
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> stack;
  stack.emplace_back(0, successors(prog, 0));
  seen[0] = true;
  while (!stack.empty()) {
    auto& [node, succ] = stack.back();
    if (succ.empty()) {
      post.push_back(node);
      stack.pop_back();
      continue;
    }
    const auto next = succ.back();
    succ.pop_back();
    if (!seen[next]) {
      seen[next] = true;
      stack.emplace_back(next, successors(prog, next));
    }
  }
  return {post.rbegin(), post.rend()};
}

}  // namespace

std::optional<Reject> check_cfg(const Program& prog) {
  const auto n = prog.insns.size();
  if (n == 0 || n > isa::kMaxInsns)
    return Reject{RejectKind::TooLarge, 0, fmt::format("{} instructions (limit {})", n, isa::kMaxInsns)};

  for (std::size_t pc = 0; pc < n; ++pc) {
    const auto& i = prog.insns[pc];
    if (i.cls() == OpClass::Jump || i.cls() == OpClass::CondJump) {
      const auto t = i.target(pc);
      if (t < 0 || t >= static_cast<std::int64_t>(n))
        return Reject{RejectKind::BadJumpTarget, pc, fmt::format("target {} outside program", t)};
    }
    const bool falls_through = i.cls() != OpClass::Exit && i.cls() != OpClass::Jump;
    if (falls_through && pc + 1 == n)
      return Reject{RejectKind::BadJumpTarget, pc, "falls off the end of the program"};
  }

  // Iterative DFS with colors; an edge into a grey node closes a loop.
  enum Color : std::uint8_t { White, Grey, Black };
  std::vector<Color> color(n, White);
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> stack;
  stack.emplace_back(0, successors(prog, 0));
  color[0] = Grey;
  while (!stack.empty()) {
    auto& [node, succ] = stack.back();
    if (succ.empty()) {
      color[node] = Black;
      stack.pop_back();
      continue;
    }
    const auto next = succ.back();
    succ.pop_back();
    if (color[next] == Grey)
      return Reject{RejectKind::BackEdge, node, fmt::format("jump to {} forms a loop", next)};
    if (color[next] == White) {
      color[next] = Grey;
      stack.emplace_back(next, successors(prog, next));
    }
  }
  for (std::size_t pc = 0; pc < n; ++pc)
    if (color[pc] == White) return Reject{RejectKind::Unreachable, pc, {}};
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Abstract interpretation

namespace {

constexpr int kSlots = kStackSize / 8;

struct StackState {
  std::bitset<kStackSize> init;
  std::array<std::optional<AbstractValue>, kSlots> spill;
};

struct State {
  RegisterFile regs;
  StackState stack;
};

AbstractValue join_value(const AbstractValue& a, const AbstractValue& b) {
  if (a == b) return a;
  if (a.kind != b.kind) return AbstractValue::uninit();
  if (a.kind == Kind::Scalar) return AbstractValue::scalar(a.range.hull(b.range));
  if (a.map != b.map || a.region_size != b.region_size || a.null_id != b.null_id) return AbstractValue::uninit();
  AbstractValue v = a;
  v.off = {std::min(a.off.lo, b.off.lo), std::max(a.off.hi, b.off.hi)};
  return v;
}

State join(const State& a, const State& b) {
  State s;
  for (int r = 0; r < isa::kNumRegisters; ++r) s.regs[r] = join_value(a.regs[r], b.regs[r]);
  s.stack.init = a.stack.init & b.stack.init;
  for (int k = 0; k < kSlots; ++k) {
    const auto& x = a.stack.spill[k];
    const auto& y = b.stack.spill[k];
    if (x && y) {
      auto j = join_value(*x, *y);
      if (j.kind != Kind::Uninit) s.stack.spill[k] = j;
    }
  }
  return s;
}

class Tracker {
 public:
  Tracker(const Program& prog, const BugFlags& flags, const helpers::SignatureTable& sigs)
      : prog_(prog), flags_(flags), sigs_(sigs), in_(prog.insns.size()) {}

  VerifierOutput run() {
    VerifierOutput out;
    out.states.resize(prog_.insns.size());
    in_[0] = entry_state();
    for (auto pc : topo_order(prog_)) {
      if (!in_[pc]) continue;
      State s = *in_[pc];
      out.states[pc] = s.regs;
      if (auto r = step(pc, s, out)) {
        out.reject = std::move(r);
        out.accepted = false;
        out.callsites.clear();
        return out;
      }
    }
    out.accepted = true;
    out.max_stack_depth = max_depth_;
    return out;
  }

 private:
  State entry_state() const {
    State s;
    s.regs[isa::kFrameRegister].kind = Kind::StackAddr;
    if (prog_.type == isa::ProgType::SocketFilter) {
      s.regs[1].kind = Kind::CtxAddr;
    } else {
      s.regs[1].kind = Kind::StackAddr;
      s.regs[1].off = {-kStackSize, -kStackSize};
      for (std::int64_t b = 0; b < kTracepointCtxBytes; ++b) s.stack.init.set(b);
    }
    return s;
  }

  void flow(std::size_t to, const State& s) { in_[to] = in_[to] ? join(*in_[to], s) : s; }

  static Reject rej(RejectKind k, std::size_t pc, std::string detail = {}) { return {k, pc, std::move(detail)}; }

  std::optional<Reject> step(std::size_t pc, State& s, VerifierOutput& out) {
    const auto& i = prog_.insns[pc];
    switch (i.cls()) {
      case OpClass::Alu:
      case OpClass::Alu32:
        if (auto r = alu(pc, i, s)) return r;
        flow(pc + 1, s);
        return std::nullopt;
      case OpClass::Load:
        if (auto r = load(pc, i, s)) return r;
        flow(pc + 1, s);
        return std::nullopt;
      case OpClass::Store:
      case OpClass::StoreImm:
        if (auto r = store(pc, i, s)) return r;
        flow(pc + 1, s);
        return std::nullopt;
      case OpClass::Jump:
        flow(static_cast<std::size_t>(i.target(pc)), s);
        return std::nullopt;
      case OpClass::CondJump:
        return branch(pc, i, s);
      case OpClass::Call:
        if (auto r = call(pc, i, s, out)) return r;
        flow(pc + 1, s);
        return std::nullopt;
      case OpClass::Exit: {
        const auto& r0 = s.regs[0];
        if (r0.kind == Kind::Uninit) return rej(RejectKind::UninitRead, pc, "r0 not set at exit");
        if (r0.kind != Kind::Scalar) return rej(RejectKind::BadReturn, pc, "r0 holds a pointer at exit");
        return std::nullopt;
      }
    }
    return std::nullopt;
  }

  std::optional<Reject> operand(std::size_t pc, const Instruction& i, const State& s, AbstractValue& v) const {
    if (!i.src().is_reg()) {
      v = AbstractValue::scalar(ValueRange::point(static_cast<std::uint64_t>(i.src().imm)));
      return std::nullopt;
    }
    v = s.regs[i.src().reg->index()];
    if (v.kind == Kind::Uninit) return rej(RejectKind::UninitRead, pc, fmt::format("r{} is uninitialized", i.src().reg->index()));
    return std::nullopt;
  }

  // ptr +/- scalar. Scalars given as a point are taken as signed deltas.
  static std::optional<OffsetRange> shift_offsets(OffsetRange off, const ValueRange& d, bool subtract) {
    __int128 lo, hi;
    if (d.is_point()) {
      const auto delta = static_cast<__int128>(static_cast<std::int64_t>(d.umin));
      lo = subtract ? off.lo - delta : off.lo + delta;
      hi = subtract ? off.hi - delta : off.hi + delta;
    } else {
      if (d.umax > kMaxPtrDelta) return std::nullopt;
      lo = subtract ? off.lo - static_cast<__int128>(d.umax) : off.lo + static_cast<__int128>(d.umin);
      hi = subtract ? off.hi - static_cast<__int128>(d.umin) : off.hi + static_cast<__int128>(d.umax);
    }
    constexpr __int128 kMin = std::numeric_limits<std::int64_t>::min();
    constexpr __int128 kMax = std::numeric_limits<std::int64_t>::max();
    if (lo < kMin || hi > kMax) return std::nullopt;
    return OffsetRange{static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)};
  }

  std::optional<Reject> alu(std::size_t pc, const Instruction& i, State& s) {
    auto& dst = s.regs[i.dst().index()];
    AbstractValue src;
    if (auto r = operand(pc, i, s, src)) return r;
    const auto op = i.opcode();

    if (op == Opcode::Mov) {
      dst = src;
      return std::nullopt;
    }
    if (op != Opcode::Mov32 && dst.kind == Kind::Uninit)
      return rej(RejectKind::UninitRead, pc, fmt::format("r{} is uninitialized", i.dst().index()));

    if (src.kind == Kind::Scalar && (op == Opcode::Mov32 || dst.kind == Kind::Scalar)) {
      dst = AbstractValue::scalar(alu_range(op, dst.range, src.range, !i.src().is_reg(), flags_));
      return std::nullopt;
    }

    const bool additive = op == Opcode::Add || op == Opcode::Sub;
    if (dst.is_nullable() || (src.is_nullable() && op == Opcode::Add)) {
      // Nullable results are meant to be unusable for arithmetic until tested.
      if (flags_.mem_or_null_untracked && dst.kind == Kind::MemOrNull && additive && src.kind == Kind::Scalar)
        return std::nullopt;
      return rej(RejectKind::UnboundedAddrArith, pc, "arithmetic on a possibly-null pointer");
    }
    if (additive && dst.is_pointer() && src.kind == Kind::Scalar) {
      auto off = shift_offsets(dst.off, src.range, op == Opcode::Sub);
      if (!off) return rej(RejectKind::UnboundedAddrArith, pc, fmt::format("offset {} unbounded", src.range.to_string()));
      dst.off = *off;
      return std::nullopt;
    }
    if (op == Opcode::Add && dst.kind == Kind::Scalar && src.is_pointer()) {
      auto off = shift_offsets(src.off, dst.range, false);
      if (!off) return rej(RejectKind::UnboundedAddrArith, pc, fmt::format("offset {} unbounded", dst.range.to_string()));
      dst = src;
      dst.off = *off;
      return std::nullopt;
    }
    return rej(RejectKind::UnboundedAddrArith, pc,
               fmt::format("'{}' not allowed on pointer operands", isa::info(op).mnemonic));
  }

  // Validates an access of `width` bytes at base+off. Returns the exact stack
  // byte offset when the base is a stack pointer with a known offset.
  std::optional<Reject> check_access(std::size_t pc, const AbstractValue& base, std::int64_t off, int width,
                                     bool write, const State& s, std::optional<std::int64_t>& stack_at) {
    stack_at.reset();
    const __int128 lo = static_cast<__int128>(base.off.lo) + off;
    const __int128 hi = static_cast<__int128>(base.off.hi) + off + width;
    auto span = [&] { return fmt::format("[{}, {})", static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)); };
    switch (base.kind) {
      case Kind::Uninit:
        return rej(RejectKind::UninitRead, pc, "base register is uninitialized");
      case Kind::Scalar:
        return rej(RejectKind::BadAccess, pc, "dereference of a scalar");
      case Kind::MapValueOrNull:
      case Kind::MemOrNull:
        return rej(RejectKind::BadAccess, pc, "dereference of a possibly-null pointer");
      case Kind::StackAddr:
        if (lo < -kStackSize || hi > 0)
          return rej(RejectKind::OobStack, pc, fmt::format("access {} outside stack [-512, 0)", span()));
        if (!write) {
          for (auto b = lo; b < hi; ++b)
            if (!s.stack.init.test(static_cast<std::size_t>(b + kStackSize)))
              return rej(RejectKind::UninitRead, pc, fmt::format("stack byte {} read before written", static_cast<std::int64_t>(b)));
        }
        max_depth_ = std::max(max_depth_, static_cast<std::int64_t>(-lo));
        if (base.off.lo == base.off.hi) stack_at = static_cast<std::int64_t>(lo);
        return std::nullopt;
      case Kind::MapValueAddr:
        if (lo < 0 || hi > static_cast<__int128>(base.region_size))
          return rej(RejectKind::OobMapValue, pc,
                     fmt::format("access {} outside value of {} bytes", span(), base.region_size));
        return std::nullopt;
      case Kind::CtxAddr: {
        const __int128 floor = write ? kCtxPacketBytes : 0;
        if (lo < floor || hi > kCtxSize)
          return rej(RejectKind::OobCtx, pc, fmt::format("{} {} outside context", write ? "write" : "read", span()));
        return std::nullopt;
      }
    }
    return std::nullopt;
  }

  std::optional<Reject> load(std::size_t pc, const Instruction& i, State& s) {
    const auto& base = s.regs[i.src().reg->index()];
    std::optional<std::int64_t> at;
    if (auto r = check_access(pc, base, i.off(), i.width(), false, s, at)) return r;
    AbstractValue v = AbstractValue::scalar(
        i.width() == 8 ? ValueRange::full() : ValueRange::from_u64(0, (std::uint64_t{1} << (8 * i.width())) - 1));
    if (at && i.width() == 8 && (*at % 8) == 0) {
      if (const auto& sp = s.stack.spill[(*at + kStackSize) / 8]) v = *sp;
    }
    s.regs[i.dst().index()] = v;
    return std::nullopt;
  }

  std::optional<Reject> store(std::size_t pc, const Instruction& i, State& s) {
    const auto& base = s.regs[i.dst().index()];
    AbstractValue v = AbstractValue::scalar(ValueRange::point(static_cast<std::uint64_t>(i.src().imm)));
    if (i.cls() == OpClass::Store) {
      v = s.regs[i.src().reg->index()];
      if (v.kind == Kind::Uninit)
        return rej(RejectKind::UninitRead, pc, fmt::format("r{} is uninitialized", i.src().reg->index()));
    }
    std::optional<std::int64_t> at;
    if (auto r = check_access(pc, base, i.off(), i.width(), true, s, at)) return r;
    if (base.kind == Kind::StackAddr) {
      const auto lo = base.off.lo + i.off() + kStackSize;
      const auto hi = base.off.hi + i.off() + i.width() + kStackSize;
      for (auto k = lo / 8; k < (hi + 7) / 8; ++k) s.stack.spill[k].reset();
      if (at) {
        for (int b = 0; b < i.width(); ++b) s.stack.init.set(static_cast<std::size_t>(*at + kStackSize + b));
        if (i.width() == 8 && (*at % 8) == 0) s.stack.spill[(*at + kStackSize) / 8] = v;
      }
    }
    return std::nullopt;
  }

  std::optional<Reject> branch(std::size_t pc, const Instruction& i, State& s) {
    const auto lhs = s.regs[i.dst().index()];
    if (lhs.kind == Kind::Uninit)
      return rej(RejectKind::UninitRead, pc, fmt::format("r{} is uninitialized", i.dst().index()));
    AbstractValue rhs;
    if (auto r = operand(pc, i, s, rhs)) return r;
    const auto target = static_cast<std::size_t>(i.target(pc));
    const auto op = i.opcode();

    const bool rhs_zero = rhs.kind == Kind::Scalar && rhs.range == ValueRange::point(0);
    if (lhs.is_nullable() && rhs_zero && (op == Opcode::Jeq || op == Opcode::Jne)) {
      State null_s = s, live_s = s;
      mark_null(null_s, lhs.null_id, true);
      mark_null(live_s, lhs.null_id, false);
      flow(target, op == Opcode::Jeq ? null_s : live_s);
      flow(pc + 1, op == Opcode::Jeq ? live_s : null_s);
      return std::nullopt;
    }

    if (lhs.kind != Kind::Scalar || rhs.kind != Kind::Scalar) {
      flow(target, s);
      flow(pc + 1, s);
      return std::nullopt;
    }
    for (bool taken : {true, false}) {
      auto r = refine(op, taken, lhs.range, rhs.range);
      if (!r.lhs) continue;
      State b = s;
      b.regs[i.dst().index()].range = *r.lhs;
      if (i.src().is_reg()) b.regs[i.src().reg->index()].range = r.rhs;
      flow(taken ? target : pc + 1, b);
    }
    return std::nullopt;
  }

  void mark_null(State& s, int id, bool is_null) const {
    auto resolve = [&](AbstractValue& v) {
      if (!v.is_nullable() || v.null_id != id) return;
      if (is_null) {
        v = AbstractValue::scalar(ValueRange::point(0));
      } else {
        v.kind = Kind::MapValueAddr;
        v.off = {0, 0};
        v.null_id = 0;
      }
    };
    for (auto& r : s.regs) resolve(r);
    for (auto& sp : s.stack.spill)
      if (sp) resolve(*sp);
  }

  std::optional<Reject> call(std::size_t pc, const Instruction& i, State& s, VerifierOutput& out) {
    using helpers::ArgKind;
    const auto& sig = sigs_.get(i.helper());
    Callsite site{pc, i.helper(), {}};
    int map_id = -1;
    auto bad = [&](int reg, const std::string& why) {
      return rej(RejectKind::BadHelperArg, pc, fmt::format("{} r{}: {}", isa::helper_name(i.helper()), reg, why));
    };

    std::vector<std::pair<std::int64_t, std::int64_t>> init_after;
    for (std::size_t k = 0; k < sig.args.size(); ++k) {
      const int reg = static_cast<int>(k) + 1;
      const auto& spec = sig.args[k];
      const auto& v = s.regs[reg];
      if (v.kind == Kind::Uninit) return rej(RejectKind::UninitRead, pc, fmt::format("argument r{} is uninitialized", reg));

      switch (spec.kind) {
        case ArgKind::MapHandle: {
          if (v.kind != Kind::Scalar) return bad(reg, "expected a map id");
          if (prog_.maps.empty()) return bad(reg, "program declares no maps");
          const auto e = ValueRange::from_u64(0, prog_.maps.size() - 1);
          if (!v.range.is_point() || !v.range.within(e))
            return bad(reg, fmt::format("map id {} not a constant in {}", v.range.to_string(), e.to_string()));
          map_id = static_cast<int>(v.range.umin);
          if (!flags_.helper_map_mischeck && prog_.maps[map_id].kind != spec.map_kind)
            return bad(reg, fmt::format("map '{}' is not a {} map", prog_.maps[map_id].name, isa::map_kind_name(spec.map_kind)));
          site.args.push_back({reg, v.range});
          break;
        }
        case ArgKind::Scalar:
          if (v.kind != Kind::Scalar) return bad(reg, "expected a scalar");
          if (!v.range.within(spec.expected))
            return bad(reg, fmt::format("{} outside expected {}", v.range.to_string(), spec.expected.to_string()));
          if (spec.must_be_const && !v.range.is_point()) return bad(reg, "must be a constant");
          site.args.push_back({reg, v.range});
          break;
        case ArgKind::Ctx:
          if (v.kind != Kind::CtxAddr || v.off != OffsetRange{0, 0}) return bad(reg, "expected the context pointer");
          break;
        case ArgKind::MemReadable:
        case ArgKind::MemWritable: {
          std::uint64_t size = 0;
          if (spec.kind == ArgKind::MemReadable) {
            if (map_id < 0) return bad(reg, "no map argument to size the value");
            size = prog_.maps[map_id].value_size;
          } else {
            const auto& sz = s.regs[spec.size_arg + 1];
            if (sz.kind != Kind::Scalar) return bad(reg, "size argument is not a scalar");
            size = sz.range.umax;
          }
          if (size > static_cast<std::uint64_t>(kStackSize) * 1024) return bad(reg, fmt::format("size up to {:#x} is unbounded", size));
          const bool write = spec.kind == ArgKind::MemWritable;
          if (v.kind == Kind::StackAddr) {
            const auto lo = v.off.lo, hi = v.off.hi + static_cast<std::int64_t>(size);
            if (lo < -kStackSize || hi > 0)
              return rej(RejectKind::OobStack, pc, fmt::format("helper buffer [{}, {}) outside stack", lo, hi));
            if (!write) {
              for (auto b = lo; b < hi; ++b)
                if (!s.stack.init.test(static_cast<std::size_t>(b + kStackSize)))
                  return rej(RejectKind::UninitRead, pc, fmt::format("stack byte {} read before written", b));
            } else if (v.off.lo == v.off.hi) {
              init_after.emplace_back(lo, hi);
            }
            max_depth_ = std::max(max_depth_, -lo);
          } else if (v.kind == Kind::MapValueAddr) {
            if (v.off.lo < 0 || static_cast<std::uint64_t>(v.off.hi) + size > v.region_size)
              return rej(RejectKind::OobMapValue, pc, "helper buffer outside map value");
          } else {
            return bad(reg, "expected a stack or map value pointer");
          }
          break;
        }
        case ArgKind::RingbufMem:
          if (v.kind != Kind::MapValueAddr || v.off != OffsetRange{0, 0} || v.map < 0 ||
              (!flags_.helper_map_mischeck && prog_.maps[v.map].kind != isa::MapKind::Ringbuf))
            return bad(reg, "expected a ringbuf reservation");
          break;
      }
    }

    for (auto [lo, hi] : init_after) {
      for (auto b = lo; b < hi; ++b) s.stack.init.set(static_cast<std::size_t>(b + kStackSize));
      for (auto k = (lo + kStackSize) / 8; k < (hi + kStackSize + 7) / 8; ++k) s.stack.spill[k].reset();
    }
    for (int r = 1; r <= 5; ++r) s.regs[r] = AbstractValue::uninit();

    AbstractValue ret = AbstractValue::scalar(ValueRange::full());
    switch (sig.ret) {
      case helpers::RetKind::Scalar:
        break;
      case helpers::RetKind::MapValueOrNull:
        ret.kind = Kind::MapValueOrNull;
        ret.map = map_id;
        ret.region_size = prog_.maps[map_id].value_size;
        ret.null_id = static_cast<int>(pc) + 1;
        break;
      case helpers::RetKind::MemOrNull:
        ret.kind = Kind::MemOrNull;
        ret.map = map_id;
        ret.region_size = site.args.size() > 1 ? site.args[1].range.umin : 0;
        ret.null_id = static_cast<int>(pc) + 1;
        break;
    }
    ret.range = ret.kind == Kind::Scalar ? ValueRange::full() : ValueRange{};
    s.regs[0] = ret;
    out.callsites[pc] = std::move(site);
    return std::nullopt;
  }

  const Program& prog_;
  BugFlags flags_;
  const helpers::SignatureTable& sigs_;
  std::vector<std::optional<State>> in_;
  std::int64_t max_depth_ = 0;
};

}  // namespace

VerifierOutput track(const Program& prog, const BugFlags& flags, const helpers::SignatureTable& sigs) {
  return Tracker(prog, flags, sigs).run();
}

VerifierOutput verify(const Program& prog, const BugFlags& flags, const helpers::SignatureTable& sigs) {
  if (auto r = check_cfg(prog)) {
    VerifierOutput out;
    out.reject = std::move(r);
    return out;
  }
  return track(prog, flags, sigs);
}

}  // namespace verifier
}  // namespace moat
