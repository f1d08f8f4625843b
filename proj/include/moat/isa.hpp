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

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace moat::isa {

constexpr std::size_t kMaxInsns = 4096;
constexpr int kNumRegisters = 11;
constexpr int kFrameRegister = 10;

// r0..r10. r10 is the read-only frame base.
class Register {
 public:
  constexpr Register() = default;
  explicit Register(int index);

  constexpr int index() const { return index_; }
  constexpr bool is_frame() const { return index_ == kFrameRegister; }
  friend constexpr bool operator==(Register, Register) = default;

 private:
  int index_ = 0;
};

enum class Opcode : std::uint8_t {
  Mov, Mov32, Add, Sub, Mul, And, Or, Or32, Lsh, Rsh, Mod32,
  Ldx1, Ldx2, Ldx4, Ldx8,
  Stx1, Stx2, Stx4, Stx8,
  St1, St2, St4, St8,
  Ja, Jeq, Jne, Jgt, Jge, Jlt, Jle,
  Call, Exit,
};

inline constexpr Opcode kAllOpcodes[] = {
    Opcode::Mov,  Opcode::Mov32, Opcode::Add,  Opcode::Sub,  Opcode::Mul,
    Opcode::And,  Opcode::Or,    Opcode::Or32, Opcode::Lsh,  Opcode::Rsh,
    Opcode::Mod32, Opcode::Ldx1, Opcode::Ldx2, Opcode::Ldx4, Opcode::Ldx8,
    Opcode::Stx1, Opcode::Stx2,  Opcode::Stx4, Opcode::Stx8, Opcode::St1,
    Opcode::St2,  Opcode::St4,   Opcode::St8,  Opcode::Ja,   Opcode::Jeq,
    Opcode::Jne,  Opcode::Jgt,   Opcode::Jge,  Opcode::Jlt,  Opcode::Jle,
    Opcode::Call, Opcode::Exit,
};

// What an instruction is able to affect. There is deliberately no class for
// control registers (PKRS, CR3): the ISA cannot name them.
enum class OpClass { Alu, Alu32, Load, Store, StoreImm, Jump, CondJump, Call, Exit };

struct OpcodeInfo {
  std::string_view mnemonic;
  OpClass cls;
  int width;  // access width in bytes for memory ops, 0 otherwise
};

const OpcodeInfo& info(Opcode op);

enum class HelperId : std::uint8_t {
  MapLookup, MapUpdate, MapDelete, RingbufReserve, RingbufSubmit, SkbLoad,
};

inline constexpr HelperId kAllHelpers[] = {
    HelperId::MapLookup,      HelperId::MapUpdate,     HelperId::MapDelete,
    HelperId::RingbufReserve, HelperId::RingbufSubmit, HelperId::SkbLoad,
};

std::string_view helper_name(HelperId id);
std::optional<HelperId> helper_by_name(std::string_view name);

// Second operand of ALU ops and conditional jumps.
struct Operand {
  std::optional<Register> reg;
  std::int64_t imm = 0;

  bool is_reg() const { return reg.has_value(); }
  friend bool operator==(const Operand&, const Operand&) = default;
};

// Field use by class:
//   ALU       dst op= src
//   Load      dst = *(width*)(src + off)
//   Store     *(width*)(dst + off) = src
//   StoreImm  *(width*)(dst + off) = imm
//   Jump      pc += 1 + off (conditional: compare dst with src)
//   Call      helper
class Instruction {
 public:
  static Instruction alu(Opcode op, Register dst, Operand src);
  static Instruction load(Opcode op, Register dst, Register base, std::int64_t off);
  static Instruction store(Opcode op, Register base, std::int64_t off, Register src);
  static Instruction store_imm(Opcode op, Register base, std::int64_t off, std::int64_t imm);
  static Instruction jump(std::int64_t off);
  static Instruction cond_jump(Opcode op, Register lhs, Operand rhs, std::int64_t off);
  static Instruction call(HelperId helper);
  static Instruction exit();

  Opcode opcode() const { return op_; }
  OpClass cls() const { return info(op_).cls; }
  int width() const { return info(op_).width; }
  Register dst() const { return dst_; }
  const Operand& src() const { return src_; }
  std::int16_t off() const { return off_; }
  HelperId helper() const { return helper_; }

  // Absolute jump target for Jump/CondJump at position pc. May be out of range.
  std::int64_t target(std::size_t pc) const {
    return static_cast<std::int64_t>(pc) + 1 + off_;
  }

  friend bool operator==(const Instruction&, const Instruction&) = default;

 private:
  Instruction() = default;

  Opcode op_ = Opcode::Exit;
  Register dst_;
  Operand src_;
  std::int16_t off_ = 0;
  HelperId helper_ = HelperId::MapLookup;
};

enum class ProgType { SocketFilter, Tracepoint };
enum class MapKind { Array, Ringbuf };

struct MapDecl {
  std::string name;
  MapKind kind = MapKind::Array;
  std::uint32_t value_size = 0;
  std::uint32_t n_entries = 0;
  friend bool operator==(const MapDecl&, const MapDecl&) = default;
};

struct Program {
  std::string name;
  ProgType type = ProgType::SocketFilter;
  std::vector<Instruction> insns;
  std::vector<MapDecl> maps;
  friend bool operator==(const Program&, const Program&) = default;
};

std::string_view prog_type_name(ProgType t);
std::string_view map_kind_name(MapKind k);

class AsmError : public std::runtime_error {
 public:
  AsmError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class SyntaxError : public AsmError {
  using AsmError::AsmError;
};
class UnknownMnemonic : public AsmError {
  using AsmError::AsmError;
};
// Also thrown by the Instruction factories, with line 0.
class OperandOutOfRange : public AsmError {
  using AsmError::AsmError;
};

Program assemble(std::string_view text, std::string name = "prog");
std::string disassemble(const Program& prog);
std::string disassemble(const Instruction& insn);

}  // namespace moat::isa
