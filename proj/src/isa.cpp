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

#include "moat/isa.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <limits>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace moat::isa {

namespace {

constexpr std::array<OpcodeInfo, std::size(kAllOpcodes)> kInfo = {{
    {"mov", OpClass::Alu, 0},       {"mov32", OpClass::Alu32, 0},
    {"add", OpClass::Alu, 0},       {"sub", OpClass::Alu, 0},
    {"mul", OpClass::Alu, 0},       {"and", OpClass::Alu, 0},
    {"or", OpClass::Alu, 0},        {"or32", OpClass::Alu32, 0},
    {"lsh", OpClass::Alu, 0},       {"rsh", OpClass::Alu, 0},
    {"mod32", OpClass::Alu32, 0},   {"ldx1", OpClass::Load, 1},
    {"ldx2", OpClass::Load, 2},     {"ldx4", OpClass::Load, 4},
    {"ldx8", OpClass::Load, 8},     {"stx1", OpClass::Store, 1},
    {"stx2", OpClass::Store, 2},    {"stx4", OpClass::Store, 4},
    {"stx8", OpClass::Store, 8},    {"st1", OpClass::StoreImm, 1},
    {"st2", OpClass::StoreImm, 2},  {"st4", OpClass::StoreImm, 4},
    {"st8", OpClass::StoreImm, 8},  {"ja", OpClass::Jump, 0},
    {"jeq", OpClass::CondJump, 0},  {"jne", OpClass::CondJump, 0},
    {"jgt", OpClass::CondJump, 0},  {"jge", OpClass::CondJump, 0},
    {"jlt", OpClass::CondJump, 0},  {"jle", OpClass::CondJump, 0},
    {"call", OpClass::Call, 0},     {"exit", OpClass::Exit, 0},
}};

constexpr std::array<std::string_view, std::size(kAllHelpers)> kHelperNames = {
    "map_lookup", "map_update", "map_delete", "ringbuf_reserve", "ringbuf_submit", "skb_load",
};

[[noreturn]] void out_of_range(const std::string& what) { throw OperandOutOfRange(0, what); }

void check_off16(std::int64_t off) {
  if (off < std::numeric_limits<std::int16_t>::min() || off > std::numeric_limits<std::int16_t>::max())
    out_of_range(fmt::format("offset {} does not fit 16 bits", off));
}

void check_writable_dst(Register r) {
  if (r.is_frame()) out_of_range("r10 is read-only");
}

bool fits_width(std::int64_t imm, int bytes) {
  if (bytes >= 8) return true;
  const int bits = bytes * 8;
  const std::int64_t lo = -(std::int64_t{1} << (bits - 1));
  const std::int64_t hi = (std::int64_t{1} << bits) - 1;
  return imm >= lo && imm <= hi;
}

}  // namespace

Register::Register(int index) : index_(index) {
  if (index < 0 || index >= kNumRegisters) out_of_range(fmt::format("no register r{}", index));
}

const OpcodeInfo& info(Opcode op) { return kInfo[static_cast<std::size_t>(op)]; }

std::string_view helper_name(HelperId id) { return kHelperNames[static_cast<std::size_t>(id)]; }

std::optional<HelperId> helper_by_name(std::string_view name) {
  for (auto id : kAllHelpers)
    if (helper_name(id) == name) return id;
  return std::nullopt;
}

std::string_view prog_type_name(ProgType t) {
  return t == ProgType::SocketFilter ? "socket_filter" : "tracepoint";
}

std::string_view map_kind_name(MapKind k) { return k == MapKind::Array ? "array" : "ringbuf"; }

AsmError::AsmError(std::size_t line, const std::string& what)
    : std::runtime_error(line ? fmt::format("line {}: {}", line, what) : what), line_(line) {}

Instruction Instruction::alu(Opcode op, Register dst, Operand src) {
  const auto cls = info(op).cls;
  if (cls != OpClass::Alu && cls != OpClass::Alu32) out_of_range("not an ALU opcode");
  check_writable_dst(dst);
  if (!src.is_reg()) {
    if (cls == OpClass::Alu32 && !fits_width(src.imm, 4))
      out_of_range(fmt::format("immediate {:#x} does not fit 32 bits", src.imm));
    if ((op == Opcode::Lsh || op == Opcode::Rsh) && (src.imm < 0 || src.imm > 63))
      out_of_range(fmt::format("shift amount {} outside [0, 63]", src.imm));
    if (op == Opcode::Mod32 && static_cast<std::uint32_t>(src.imm) == 0)
      out_of_range("modulo by constant zero");
  } else {
    src.imm = 0;
  }
  Instruction i;
  i.op_ = op;
  i.dst_ = dst;
  i.src_ = src;
  return i;
}

Instruction Instruction::load(Opcode op, Register dst, Register base, std::int64_t off) {
  if (info(op).cls != OpClass::Load) out_of_range("not a load opcode");
  check_writable_dst(dst);
  check_off16(off);
  Instruction i;
  i.op_ = op;
  i.dst_ = dst;
  i.src_ = Operand{base, 0};
  i.off_ = static_cast<std::int16_t>(off);
  return i;
}

Instruction Instruction::store(Opcode op, Register base, std::int64_t off, Register src) {
  if (info(op).cls != OpClass::Store) out_of_range("not a store opcode");
  check_off16(off);
  Instruction i;
  i.op_ = op;
  i.dst_ = base;
  i.src_ = Operand{src, 0};
  i.off_ = static_cast<std::int16_t>(off);
  return i;
}

Instruction Instruction::store_imm(Opcode op, Register base, std::int64_t off, std::int64_t imm) {
  if (info(op).cls != OpClass::StoreImm) out_of_range("not a store-immediate opcode");
  check_off16(off);
  if (!fits_width(imm, info(op).width))
    out_of_range(fmt::format("immediate {:#x} does not fit {} bytes", imm, info(op).width));
  Instruction i;
  i.op_ = op;
  i.dst_ = base;
  i.src_ = Operand{std::nullopt, imm};
  i.off_ = static_cast<std::int16_t>(off);
  return i;
}

Instruction Instruction::jump(std::int64_t off) {
  check_off16(off);
  Instruction i;
  i.op_ = Opcode::Ja;
  i.off_ = static_cast<std::int16_t>(off);
  return i;
}

Instruction Instruction::cond_jump(Opcode op, Register lhs, Operand rhs, std::int64_t off) {
  if (info(op).cls != OpClass::CondJump) out_of_range("not a conditional jump opcode");
  check_off16(off);
  if (rhs.is_reg()) rhs.imm = 0;
  Instruction i;
  i.op_ = op;
  i.dst_ = lhs;
  i.src_ = rhs;
  i.off_ = static_cast<std::int16_t>(off);
  return i;
}

Instruction Instruction::call(HelperId helper) {
  Instruction i;
  i.op_ = Opcode::Call;
  i.helper_ = helper;
  return i;
}

Instruction Instruction::exit() { return Instruction{}; }

// ---------------------------------------------------------------------------
// Assembler

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

class LineParser {
 public:
  explicit LineParser(std::size_t line) : line_(line) {}

  [[noreturn]] void syntax(const std::string& why) const { throw SyntaxError(line_, why); }

  // Accepts decimal or 0x-hex with optional sign. Values above INT64_MAX are
  // taken as their two's-complement bit pattern.
  std::int64_t number(std::string_view tok) const {
    tok = trim(tok);
    bool neg = false;
    if (!tok.empty() && (tok.front() == '+' || tok.front() == '-')) {
      neg = tok.front() == '-';
      tok.remove_prefix(1);
    }
    int base = 10;
    if (tok.size() > 2 && tok[0] == '0' && (tok[1] == 'x' || tok[1] == 'X')) {
      base = 16;
      tok.remove_prefix(2);
    }
    if (tok.empty()) syntax("expected a number");
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v, base);
    if (ec == std::errc::result_out_of_range) throw OperandOutOfRange(line_, "number does not fit 64 bits");
    if (ec != std::errc{} || p != tok.data() + tok.size())
      syntax(fmt::format("bad number '{}'", tok));
    if (neg) {
      if (v > (std::uint64_t{1} << 63)) throw OperandOutOfRange(line_, "number does not fit 64 bits");
      return static_cast<std::int64_t>(0 - v);
    }
    return static_cast<std::int64_t>(v);
  }

  bool is_reg(std::string_view tok) const {
    tok = trim(tok);
    return tok.size() >= 2 && (tok[0] == 'r' || tok[0] == 'R') &&
           std::all_of(tok.begin() + 1, tok.end(), [](unsigned char c) { return std::isdigit(c); });
  }

  Register reg(std::string_view tok) const {
    if (!is_reg(tok)) syntax(fmt::format("expected a register, got '{}'", trim(tok)));
    const auto idx = number(trim(tok).substr(1));
    if (idx < 0 || idx >= kNumRegisters) throw OperandOutOfRange(line_, fmt::format("no register {}", trim(tok)));
    return Register(static_cast<int>(idx));
  }

  Operand operand(std::string_view tok) const {
    if (is_reg(tok)) return Operand{reg(tok), 0};
    return Operand{std::nullopt, number(tok)};
  }

  // "[rX+off]", "[rX-off]" or "[rX]".
  std::pair<Register, std::int64_t> mem(std::string_view tok) const {
    tok = trim(tok);
    if (tok.size() < 3 || tok.front() != '[' || tok.back() != ']') syntax("expected [reg+off]");
    tok = trim(tok.substr(1, tok.size() - 2));
    const auto pos = tok.find_first_of("+-");
    if (pos == std::string_view::npos) return {reg(tok), 0};
    return {reg(tok.substr(0, pos)), number(tok.substr(pos))};
  }

  std::int64_t jump_off(std::string_view tok) const {
    tok = trim(tok);
    if (tok.empty() || (tok.front() != '+' && tok.front() != '-')) syntax("jump offset must be signed (+N or -N)");
    return number(tok);
  }

  void arity(const std::vector<std::string_view>& ops, std::size_t n, std::string_view mn) const {
    if (ops.size() != n || (n > 0 && ops.back().empty()))
      syntax(fmt::format("'{}' takes {} operand(s)", mn, n));
  }

  template <class F>
  auto wrap(F&& f) const {
    try {
      return f();
    } catch (const OperandOutOfRange& e) {
      if (e.line() != 0) throw;
      throw OperandOutOfRange(line_, e.what());
    }
  }

 private:
  std::size_t line_;
};

std::optional<Opcode> opcode_by_mnemonic(std::string_view mn) {
  for (auto op : kAllOpcodes)
    if (info(op).mnemonic == mn) return op;
  return std::nullopt;
}

void parse_directive(const LineParser& lp, std::string_view body, Program& prog) {
  std::vector<std::string_view> words;
  for (auto w : split(body, ' '))
    if (!w.empty()) words.push_back(w);
  const auto dir = lower(words.front());
  if (dir == ".type") {
    if (words.size() != 2) lp.syntax(".type takes one argument");
    const auto t = lower(words[1]);
    if (t == "socket_filter") prog.type = ProgType::SocketFilter;
    else if (t == "tracepoint") prog.type = ProgType::Tracepoint;
    else lp.syntax(fmt::format("unknown program type '{}'", words[1]));
    return;
  }
  if (dir == ".map") {
    if (words.size() != 5) lp.syntax(".map <name> kind=... value_size=... entries=...");
    MapDecl m;
    m.name = std::string(words[1]);
    bool have_kind = false, have_size = false, have_entries = false;
    for (std::size_t i = 2; i < words.size(); ++i) {
      const auto eq = words[i].find('=');
      if (eq == std::string_view::npos) lp.syntax(fmt::format("expected key=value, got '{}'", words[i]));
      const auto key = lower(words[i].substr(0, eq));
      const auto val = words[i].substr(eq + 1);
      if (key == "kind") {
        const auto k = lower(val);
        if (k == "array") m.kind = MapKind::Array;
        else if (k == "ringbuf") m.kind = MapKind::Ringbuf;
        else lp.syntax(fmt::format("unknown map kind '{}'", val));
        have_kind = true;
      } else if (key == "value_size" || key == "entries") {
        const auto n = lp.number(val);
        if (n <= 0 || n > std::numeric_limits<std::uint32_t>::max())
          throw OperandOutOfRange(0, fmt::format("{} out of range", key));
        (key == "entries" ? m.n_entries : m.value_size) = static_cast<std::uint32_t>(n);
        (key == "entries" ? have_entries : have_size) = true;
      } else {
        lp.syntax(fmt::format("unknown map attribute '{}'", key));
      }
    }
    if (!have_kind || !have_size || !have_entries) lp.syntax(".map needs kind, value_size and entries");
    prog.maps.push_back(std::move(m));
    return;
  }
  lp.syntax(fmt::format("unknown directive '{}'", words.front()));
}

Instruction parse_insn(const LineParser& lp, std::string_view body) {
  const auto sp = body.find_first_of(" \t");
  const auto mn = lower(body.substr(0, sp));
  const auto rest = sp == std::string_view::npos ? std::string_view{} : trim(body.substr(sp));
  const auto ops = rest.empty() ? std::vector<std::string_view>{} : split(rest, ',');

  if (mn == "call") {
    lp.arity(ops, 1, mn);
    auto id = helper_by_name(lower(ops[0]));
    if (!id) throw UnknownMnemonic(0, fmt::format("unknown helper '{}'", ops[0]));
    return Instruction::call(*id);
  }
  const auto op = opcode_by_mnemonic(mn);
  if (!op) throw UnknownMnemonic(0, fmt::format("unknown mnemonic '{}'", mn));

  return lp.wrap([&] {
    switch (info(*op).cls) {
      case OpClass::Alu:
      case OpClass::Alu32:
        lp.arity(ops, 2, mn);
        return Instruction::alu(*op, lp.reg(ops[0]), lp.operand(ops[1]));
      case OpClass::Load: {
        lp.arity(ops, 2, mn);
        auto [base, off] = lp.mem(ops[1]);
        return Instruction::load(*op, lp.reg(ops[0]), base, off);
      }
      case OpClass::Store: {
        lp.arity(ops, 2, mn);
        auto [base, off] = lp.mem(ops[0]);
        return Instruction::store(*op, base, off, lp.reg(ops[1]));
      }
      case OpClass::StoreImm: {
        lp.arity(ops, 2, mn);
        auto [base, off] = lp.mem(ops[0]);
        return Instruction::store_imm(*op, base, off, lp.number(ops[1]));
      }
      case OpClass::Jump:
        lp.arity(ops, 1, mn);
        return Instruction::jump(lp.jump_off(ops[0]));
      case OpClass::CondJump:
        lp.arity(ops, 3, mn);
        return Instruction::cond_jump(*op, lp.reg(ops[0]), lp.operand(ops[1]), lp.jump_off(ops[2]));
      case OpClass::Exit:
        lp.arity(ops, 0, mn);
        return Instruction::exit();
      case OpClass::Call:
        break;
    }
    lp.syntax("unreachable");
  });
}

std::string format_imm(std::int64_t v) {
  if (v > -4096 && v < 4096) return fmt::format("{}", v);
  return fmt::format("{:#x}", static_cast<std::uint64_t>(v));
}

std::string format_off(std::int64_t v) { return v < 0 ? fmt::format("-{}", -v) : fmt::format("+{}", v); }

std::string format_operand(const Operand& o) {
  return o.is_reg() ? fmt::format("r{}", o.reg->index()) : format_imm(o.imm);
}

}  // namespace

Program assemble(std::string_view text, std::string name) {
  Program prog;
  prog.name = std::move(name);
  std::size_t line_no = 0;
  for (auto raw : split(text, '\n')) {
    ++line_no;
    const auto hash = raw.find('#');
    const auto body = trim(raw.substr(0, hash));
    if (body.empty()) continue;
    LineParser lp(line_no);
    try {
      if (body.front() == '.') {
        parse_directive(lp, body, prog);
      } else {
        prog.insns.push_back(parse_insn(lp, body));
      }
    } catch (const AsmError& e) {
      if (e.line() != 0) throw;
      if (dynamic_cast<const UnknownMnemonic*>(&e)) throw UnknownMnemonic(line_no, e.what());
      if (dynamic_cast<const OperandOutOfRange*>(&e)) throw OperandOutOfRange(line_no, e.what());
      throw SyntaxError(line_no, e.what());
    }
  }
  if (prog.insns.empty()) throw SyntaxError(line_no, "program has no instructions");
  if (prog.insns.size() > kMaxInsns)
    throw OperandOutOfRange(line_no, fmt::format("more than {} instructions", kMaxInsns));
  return prog;
}

std::string disassemble(const Instruction& i) {
  const auto mn = info(i.opcode()).mnemonic;
  switch (i.cls()) {
    case OpClass::Alu:
    case OpClass::Alu32:
      return fmt::format("{} r{}, {}", mn, i.dst().index(), format_operand(i.src()));
    case OpClass::Load:
      return fmt::format("{} r{}, [r{}{}]", mn, i.dst().index(), i.src().reg->index(), format_off(i.off()));
    case OpClass::Store:
      return fmt::format("{} [r{}{}], r{}", mn, i.dst().index(), format_off(i.off()), i.src().reg->index());
    case OpClass::StoreImm:
      return fmt::format("{} [r{}{}], {}", mn, i.dst().index(), format_off(i.off()), format_imm(i.src().imm));
    case OpClass::Jump:
      return fmt::format("ja {}", format_off(i.off()));
    case OpClass::CondJump:
      return fmt::format("{} r{}, {}, {}", mn, i.dst().index(), format_operand(i.src()), format_off(i.off()));
    case OpClass::Call:
      return fmt::format("call {}", helper_name(i.helper()));
    case OpClass::Exit:
      return "exit";
  }
  return {};
}

std::string disassemble(const Program& prog) {
  std::vector<std::string> lines;
  if (prog.type != ProgType::SocketFilter) lines.push_back(fmt::format(".type {}", prog_type_name(prog.type)));
  for (const auto& m : prog.maps)
    lines.push_back(fmt::format(".map {} kind={} value_size={} entries={}", m.name, map_kind_name(m.kind),
                                m.value_size, m.n_entries));
  for (const auto& i : prog.insns) lines.push_back(disassemble(i));
  return fmt::format("{}", fmt::join(lines, "\n"));
}

}  // namespace moat::isa
