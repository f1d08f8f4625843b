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

#include "moat/runtime.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>

#include <fmt/format.h>

namespace moat::runtime {

using isa::Opcode;
using isa::OpClass;
using mem::KeyPerm;
using mem::kPageSize;

mem::PkrsState kernel_pkrs() { return mem::PkrsState::all(KeyPerm::AE); }

mem::PkrsState bpf_pkrs(const MoatConfig& cfg) {
  auto p = mem::PkrsState::all(KeyPerm::AD);
  p.set(kKeyBpf, KeyPerm::AE);
  if (cfg.pks) {
    p.set(kKeyKernel, KeyPerm::AD).set(kKeyShared, KeyPerm::WD).set(kKeyCritical, KeyPerm::AD);
  } else {
    p.set(kKeyKernel, KeyPerm::AE).set(kKeyShared, KeyPerm::AE);
    p.set(kKeyCritical, cfg.cop ? KeyPerm::AD : KeyPerm::AE);
  }
  return p;
}

mem::PkrsState helper_pkrs(const MoatConfig& cfg) {
  auto p = mem::PkrsState::all(KeyPerm::AD);
  p.set(kKeyKernel, KeyPerm::AE).set(kKeyBpf, KeyPerm::AE).set(kKeyShared, KeyPerm::WD);
  p.set(kKeyCritical, cfg.cop ? KeyPerm::AD : KeyPerm::AE);
  return p;
}

std::string_view outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Completed: return "completed";
    case Outcome::VerifierReject: return "verifier_reject";
    case Outcome::DpaViolation: return "dpa_violation";
    case Outcome::PksViolation: return "pks_violation";
    case Outcome::PageFault: return "page_fault";
    case Outcome::CopViolation: return "cop_violation";
    case Outcome::KernelTampered: return "kernel_tampered";
  }
  return "?";
}

std::optional<Outcome> outcome_by_name(std::string_view name) {
  for (auto o : kAllOutcomes)
    if (outcome_name(o) == name) return o;
  return std::nullopt;
}

int exit_code(Outcome o) {
  switch (o) {
    case Outcome::Completed: return 0;
    case Outcome::VerifierReject: return 1;
    case Outcome::DpaViolation: return 3;
    case Outcome::PksViolation: return 4;
    case Outcome::PageFault: return 5;
    case Outcome::CopViolation: return 6;
    case Outcome::KernelTampered: return 7;
  }
  return 1;
}

std::string Verdict::summary() const {
  switch (outcome) {
    case Outcome::Completed:
      return fmt::format("completed r0={:#x}", r0);
    case Outcome::VerifierReject:
      return fmt::format("verifier_reject: {}", reason);
    case Outcome::DpaViolation:
      return fmt::format("dpa_violation insn={} r{}={:#x} outside {}", dpa->insn, dpa->reg, dpa->value,
                         dpa->range.to_string());
    case Outcome::KernelTampered:
      return fmt::format("kernel_tampered at {:#x}", tampered.value_or(0));
    default:
      return fmt::format("{} insn={}{} {}", outcome_name(outcome), insn.value_or(0), in_helper ? " (helper)" : "",
                         fault ? fault->to_string() : std::string{});
  }
}

std::string ProgramImage::listing() const {
  std::string out;
  for (std::size_t i = 0; i < program.insns.size(); ++i) {
    if (auto g = guards.find(i); g != guards.end())
      for (const auto& gd : g->second)
        out += fmt::format("      guard r{}, {:#x}, {:#x}\n", gd.reg, gd.range.umin, gd.range.umax);
    out += fmt::format("{:4}: {}\n", i, isa::disassemble(program.insns[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------

Machine::Machine(MoatConfig cfg)
    : cfg_(cfg), mmu_(mem::MmuConfig{cfg.tlb_capacity, cfg.pcid_bits, 1 << 20, false}) {
  for (auto& f : kernel_frames_) f = mmu_.phys().alloc();
  mmu_.phys().frame(kernel_frames_[0])[layout::kSentinel - layout::kKernelData] = layout::kSentinelValue;
  kernel_space_ = new_space(0);
  mmu_.write_cr3(kernel_space_, 0, false);
  pcid_owner_[0] = kernel_space_;
  mmu_.set_pkrs(kernel_pkrs());
  mmu_.set_observer([this](const mem::AccessRecord& r) { on_access(r); });
}

mem::AsId Machine::new_space(std::uint32_t pcid) {
  static constexpr std::uint8_t kKeys[layout::kKernelPages] = {kKeyKernel, kKeyKernel, kKeyKernel,
                                                               kKeyKernel, kKeyShared, kKeyCritical};
  const auto as = mmu_.create_space(pcid);
  for (std::size_t i = 0; i < layout::kKernelPages; ++i)
    mmu_.map_page(as, layout::kKernelBase + i * kPageSize, kernel_frames_[i], true, false, kKeys[i]);
  return as;
}

void Machine::log(std::string line) {
  if (trace_) trace_->push_back(std::move(line));
}

namespace {
std::atomic<std::uint64_t> g_runs{0};
std::atomic<std::uint64_t> g_audit{0};
std::atomic<std::uint64_t> g_involution{0};
}  // namespace

ShadowTotals shadow_totals() { return {g_runs.load(), g_audit.load(), g_involution.load()}; }

void Machine::on_access(const mem::AccessRecord& r) {
  if (context_ != AccessContext::Bpf || !r.ok || !cfg_.all_on()) return;
  const bool bad_write = r.access == mem::Access::Write && (r.key == kKeyKernel || r.key == kKeyShared || r.key == kKeyCritical);
  const bool bad_read = r.access == mem::Access::Read && (r.key == kKeyKernel || r.key == kKeyCritical);
  if (!bad_write && !bad_read) return;
  ++audit_violations_;
  ++g_audit;
  if (audit_samples_.size() < 64) audit_samples_.push_back(r);
}

void Machine::switch_to(mem::AsId space, std::uint32_t pcid, std::string* note) {
  auto it = pcid_owner_.find(pcid);
  const bool reuse = it != pcid_owner_.end() && it->second == space;
  const bool conflict = it != pcid_owner_.end() && it->second != space;
  // A pcid last used by another space may still have its translations
  // cached, so only that pcid's entries are dropped.
  mmu_.write_cr3(space, pcid, reuse);
  if (conflict) ++conflict_flushes_;
  pcid_owner_[pcid] = space;
  if (note) *note = reuse ? "0" : "1";
}

Machine::LoadResult Machine::load(const isa::Program& prog, const verifier::BugFlags& flags,
                                  const helpers::SignatureTable& sigs) {
  LoadResult res;
  auto vout = verifier::verify(prog, flags, sigs);
  if (!vout.accepted) {
    Verdict v;
    v.outcome = Outcome::VerifierReject;
    v.reason = vout.reject_reason().value_or("rejected");
    res.rejected = std::move(v);
    return res;
  }
  const auto idx = images_.size();
  if (idx >= layout::kMaxPrograms)
    throw RuntimeError(RuntimeError::Kind::LoadFailure,
                       fmt::format("layout holds at most {} programs", layout::kMaxPrograms));

  auto img = std::make_unique<ProgramImage>();
  img->index = idx;
  img->program = prog;
  img->flags = flags;
  if (cfg_.addr_space) {
    img->pcid = static_cast<std::uint32_t>((idx + 1) & ((1u << cfg_.pcid_bits) - 1));
    img->space = new_space(img->pcid);
  } else {
    img->pcid = 1;
    if (!shared_space_) shared_space_ = new_space(1);
    img->space = *shared_space_;
  }

  try {
    img->window_base = layout::window_base(idx);
    img->window = std::make_unique<alloc::LayoutWindow>(img->window_base, layout::kWindowPages);
    img->pages = std::make_unique<alloc::PagePool>(mmu_, img->space, static_cast<int>(idx), *img->window);
    img->objects = std::make_unique<alloc::ObjectPool>(*img->pages, kKeyBpf, 1);

    img->window->skip();  // guard below the stack
    img->stack_base = img->objects->alloc(static_cast<std::size_t>(verifier::kStackSize));
    img->stack_top = img->stack_base + verifier::kStackSize;
    img->window->skip();

    const auto code_bytes = prog.insns.size() * 8;
    img->code_pages = (code_bytes + kPageSize - 1) / kPageSize;
    const auto code = img->pages->alloc(img->code_pages, kKeyBpf, false, true);
    img->code_base = code.base;
    for (std::size_t i = 0; i < prog.insns.size(); ++i) {
      const auto& in = prog.insns[i];
      const auto va = code.base + i * 8;
      auto pte = mmu_.lookup_pte(img->space, va);
      auto* p = mmu_.phys().frame(pte->pfn).data() + mem::page_offset(va);
      const auto imm = static_cast<std::uint32_t>(in.src().imm);
      const auto off = static_cast<std::uint16_t>(in.off());
      p[0] = static_cast<std::uint8_t>(in.opcode());
      p[1] = static_cast<std::uint8_t>(in.dst().index() | ((in.src().is_reg() ? in.src().reg->index() : 0) << 4));
      std::memcpy(p + 2, &off, 2);
      std::memcpy(p + 4, &imm, 4);
    }
    img->window->skip();

    for (const auto& decl : prog.maps) {
      helpers::MapBinding b;
      b.decl = decl;
      std::uint64_t bytes = std::uint64_t{decl.value_size} * decl.n_entries;
      if (decl.kind == isa::MapKind::Ringbuf) bytes += helpers::kRingbufHeaderBytes;
      const auto pages = std::max<std::uint64_t>(1, (bytes + kPageSize - 1) / kPageSize);
      const auto data = img->pages->alloc(pages, kKeyBpf, true);
      b.data_base = data.base;
      b.data_bytes = pages * kPageSize;

      // Metadata comes from the kernel's critical pool and sits right after
      // the data pages.
      const auto meta = mmu_.phys().alloc();
      auto& mf = mmu_.phys().frame(meta);
      const std::uint64_t rec[] = {helpers::kOpsSentinel, decl.value_size, decl.n_entries,
                                   static_cast<std::uint64_t>(decl.kind)};
      std::memcpy(mf.data(), rec, sizeof rec);
      b.meta_base = img->pages->adopt({meta}, kKeyCritical, true).base;
      img->meta_frames.push_back(meta);
      img->window->skip();
      img->maps.push_back(b);
    }

    if (prog.type == isa::ProgType::SocketFilter) {
      img->ctx = alloc::virt_reserve(mmu_, img->space, *img->window, 2);
      img->mirror_frame = mmu_.phys().alloc();
      img->ctx->map(1, img->mirror_frame, kKeyBpf, true);
      img->window->skip();
    }
  } catch (const alloc::AllocError& e) {
    throw RuntimeError(RuntimeError::Kind::LoadFailure, e.what());
  } catch (const mem::MemError& e) {
    throw RuntimeError(RuntimeError::Kind::LoadFailure, e.what());
  }

  img->callsites = vout.callsites;
  if (cfg_.dpa) {
    for (const auto& [pc, site] : vout.callsites) {
      auto& gs = img->guards[pc];
      for (const auto& a : site.args) gs.push_back({a.reg, a.range});
    }
  }
  img->entry_pkrs = bpf_pkrs(cfg_);
  img->defect_armed = flags.helper_map_mischeck;

  images_.push_back(std::move(img));
  res.image = images_.back().get();
  return res;
}

// ---------------------------------------------------------------------------

SwitchState Machine::switch_state() const {
  return {mmu_.pkrs(), mmu_.active_space(), mmu_.active_pcid(), cpu_.stack_cursor, cpu_.in_bpf};
}

void Machine::enter_bpf(ProgramImage& img, std::span<const std::uint8_t> event) {
  if (cpu_.in_bpf) throw RuntimeError(RuntimeError::Kind::ReentrantEntry, "already executing a BPF program");
  context_ = AccessContext::Runtime;
  cpu_.in_bpf = true;
  mmu_.write_u64(layout::kSavedPkrs, mmu_.pkrs().raw(), 4);
  // The runtime writes with the kernel's permissions until the final switch.
  mmu_.set_pkrs(kernel_pkrs());

  std::string flushed;
  switch_to(img.space, img.pcid, &flushed);
  cpu_.saved_stack_cursor = std::exchange(cpu_.stack_cursor, img.stack_top);

  if (img.program.type == isa::ProgType::SocketFilter) {
    const auto n = std::min(event.size(), layout::kMaxPacketBytes);
    std::vector<std::uint8_t> frame(kPageSize, 0);
    const auto len = static_cast<std::uint32_t>(n);
    std::memcpy(frame.data(), &len, 4);
    std::copy_n(event.begin(), n, frame.begin() + layout::kPacketDataOffset);
    mmu_.write(layout::kPacketFrame, frame);
    img.ctx->map(0, kernel_frames_[3], kKeyBpf, false);
    std::array<std::uint8_t, layout::kMirrorBytes> mirror{};
    mmu_.read(layout::kSocketObject, mirror);
    mmu_.write(img.ctx->page(1), mirror);
  } else {
    std::vector<std::uint8_t> ev(static_cast<std::size_t>(verifier::kTracepointCtxBytes), 0);
    std::copy_n(event.begin(), std::min(event.size(), ev.size()), ev.begin());
    mmu_.write(img.stack_base, ev);
  }

  mmu_.set_pkrs(img.entry_pkrs);
  log(fmt::format("ENTER prog={} pcid={} flush={}", img.program.name, img.pcid, flushed));
}

void Machine::exit_bpf(ProgramImage& img) {
  if (!cpu_.in_bpf) throw RuntimeError(RuntimeError::Kind::NotInBpf, "no BPF program is executing");
  context_ = AccessContext::Runtime;
  mmu_.set_pkrs(kernel_pkrs());
  std::uint64_t saved = 0;
  mmu_.read_u64(layout::kSavedPkrs, saved, 4);

  if (img.ctx) {
    std::array<std::uint8_t, layout::kMirrorBytes> mirror{};
    mmu_.read(img.ctx->page(1), mirror);
    mmu_.write(layout::kSocketObject, mirror);
    img.ctx->unmap(0);
  }
  switch_to(kernel_space_, 0, nullptr);
  cpu_.stack_cursor = cpu_.saved_stack_cursor;
  mmu_.set_pkrs(mem::PkrsState(static_cast<std::uint32_t>(saved)));
  cpu_.in_bpf = false;
}

helpers::HelperResult Machine::call_helper(ProgramImage& img, isa::HelperId id,
                                           const std::array<std::uint64_t, 5>& args) {
  if (static_cast<std::size_t>(id) >= std::size(isa::kAllHelpers))
    throw RuntimeError(RuntimeError::Kind::UnknownHelper, fmt::format("helper id {}", static_cast<int>(id)));
  const auto prev_ctx = std::exchange(context_, AccessContext::Helper);
  const auto saved = mmu_.set_pkrs(helper_pkrs(cfg_));
  helpers::MmuPort port(mmu_);
  helpers::HelperEnv env{port, img.maps, layout::kBounceBuffer, layout::kKernelData, img.defect_armed};
  auto res = helpers::invoke(id, env, args);
  mmu_.set_pkrs(saved);
  context_ = prev_ctx;
  return res;
}

void Machine::fire_interrupt() {
  ++interrupts_;
  const auto prev_ctx = std::exchange(context_, AccessContext::Interrupt);
  std::optional<mem::PkrsState> saved;
  if (cpu_.in_bpf) saved = mmu_.set_pkrs(mem::PkrsState::all(KeyPerm::AE));
  std::uint64_t v = 0;
  bool ok = !mmu_.read_u64(layout::kKernelScratch, v);
  ok = !mmu_.write_u64(layout::kKernelScratch, v + 1) && ok;
  ok = !mmu_.read_u64(layout::kSharedDesc, v) && ok;
  if (!ok) ++handler_faults_;
  if (saved) mmu_.set_pkrs(*saved);
  context_ = prev_ctx;
}

Verdict Machine::fault_verdict(const mem::Fault& f, std::size_t insn, bool in_helper) const {
  Verdict v;
  if (f.is_pk())
    v.outcome = f.key == kKeyCritical ? Outcome::CopViolation : Outcome::PksViolation;
  else
    v.outcome = Outcome::PageFault;
  v.fault = f;
  v.insn = insn;
  v.in_helper = in_helper;
  return v;
}

namespace {

std::uint64_t alu(Opcode op, std::uint64_t d, std::uint64_t s) {
  switch (op) {
    case Opcode::Mov: return s;
    case Opcode::Add: return d + s;
    case Opcode::Sub: return d - s;
    case Opcode::Mul: return d * s;
    case Opcode::And: return d & s;
    case Opcode::Or: return d | s;
    case Opcode::Lsh: return d << (s & 63);
    case Opcode::Rsh: return d >> (s & 63);
    case Opcode::Mov32: return static_cast<std::uint32_t>(s);
    case Opcode::Or32: return static_cast<std::uint32_t>(d | s);
    case Opcode::Mod32: {
      const auto a = static_cast<std::uint32_t>(d), b = static_cast<std::uint32_t>(s);
      return b ? a % b : a;
    }
    default: return d;
  }
}

bool compare(Opcode op, std::uint64_t a, std::uint64_t b) {
  switch (op) {
    case Opcode::Jeq: return a == b;
    case Opcode::Jne: return a != b;
    case Opcode::Jgt: return a > b;
    case Opcode::Jge: return a >= b;
    case Opcode::Jlt: return a < b;
    case Opcode::Jle: return a <= b;
    default: return false;
  }
}

}  // namespace

std::optional<Verdict> Machine::exec(ProgramImage& img, std::array<std::uint64_t, 11>& regs) {
  const auto& insns = img.program.insns;
  std::size_t pc = 0;
  // Without back edges every instruction runs at most once.
  for (std::size_t steps = 0; steps <= insns.size(); ++steps) {
    std::array<std::uint8_t, 8> enc{};
    if (auto f = mmu_.fetch(img.code_base + pc * 8, enc)) {
      log(fmt::format("FAULT insn={} {}", pc, f->to_string().substr(6)));
      return fault_verdict(*f, pc, false);
    }
    const auto& in = insns[pc];
    const auto src = in.src().is_reg() ? regs[in.src().reg->index()] : static_cast<std::uint64_t>(in.src().imm);
    std::size_t next = pc + 1;
    std::optional<mem::Fault> fault;
    bool in_helper = false;

    switch (in.cls()) {
      case OpClass::Alu:
      case OpClass::Alu32:
        regs[in.dst().index()] = alu(in.opcode(), regs[in.dst().index()], src);
        break;
      case OpClass::Load: {
        std::uint64_t v = 0;
        fault = mmu_.read_u64(src + static_cast<std::uint64_t>(std::int64_t{in.off()}), v,
                              static_cast<std::size_t>(in.width()));
        if (!fault) regs[in.dst().index()] = v;
        break;
      }
      case OpClass::Store:
      case OpClass::StoreImm:
        fault = mmu_.write_u64(regs[in.dst().index()] + static_cast<std::uint64_t>(std::int64_t{in.off()}), src,
                               static_cast<std::size_t>(in.width()));
        break;
      case OpClass::Jump:
        next = static_cast<std::size_t>(in.target(pc));
        break;
      case OpClass::CondJump:
        if (compare(in.opcode(), regs[in.dst().index()], src)) next = static_cast<std::size_t>(in.target(pc));
        break;
      case OpClass::Call: {
        if (cfg_.dpa) {
          if (auto g = img.guards.find(pc); g != img.guards.end()) {
            for (const auto& gd : g->second) {
              const auto v = regs[gd.reg];
              const bool pass = v >= gd.range.umin && v <= gd.range.umax;
              log(fmt::format("GUARD insn={} r{}={:#x} range={} {}", pc, gd.reg, v, gd.range.to_string(),
                              pass ? "pass" : "FAIL"));
              if (!pass) {
                Verdict d;
                d.outcome = Outcome::DpaViolation;
                d.insn = pc;
                d.dpa = DpaFailure{pc, gd.reg, v, gd.range};
                return d;
              }
            }
          }
        }
        auto res = call_helper(img, in.helper(), {regs[1], regs[2], regs[3], regs[4], regs[5]});
        if (res.fault) {
          fault = res.fault;
          in_helper = true;
          break;
        }
        regs[0] = res.r0;
        for (int r = 1; r <= 5; ++r) regs[r] = 0;
        log(fmt::format("CALL insn={} helper={} r0={:#x}", pc, isa::helper_name(in.helper()), regs[0]));
        break;
      }
      case OpClass::Exit:
        return std::nullopt;
    }

    if (fault) {
      log(fmt::format("FAULT insn={} {}", pc, fault->to_string().substr(6)));
      return fault_verdict(*fault, pc, in_helper);
    }
    ++cpu_.instruction_counter;
    if (cpu_.pending_interrupt_at && cpu_.instruction_counter == *cpu_.pending_interrupt_at) {
      log(fmt::format("IRQ insn={}", pc));
      fire_interrupt();
    }
    pc = next;
  }
  throw std::logic_error("program ran past its instruction budget");
}

Verdict Machine::run(ProgramImage& img, std::span<const std::uint8_t> event) {
  std::vector<std::string> lines;
  if (cfg_.trace) trace_ = &lines;

  // Exploit-success oracle: sentinel bytes before and after.
  const auto sentinel_before = peek(layout::kSentinel);
  const bool meta_before = metadata_intact();

  cpu_.instruction_counter = 0;
  cpu_.pending_interrupt_at = cfg_.interrupt_at;
  const auto before = switch_state();
  enter_bpf(img, event);
  context_ = AccessContext::Bpf;
  std::array<std::uint64_t, 11> regs{};
  regs[1] = img.ctx_addr();
  regs[10] = img.stack_top;
  auto fail = exec(img, regs);
  exit_bpf(img);
  cpu_.pending_interrupt_at.reset();
  ++g_runs;
  if (switch_state() != before) {
    ++involution_breaks_;
    ++g_involution;
  }

  Verdict v;
  if (fail) {
    v = std::move(*fail);
  } else {
    v.r0 = regs[0];
    if (peek(layout::kSentinel) != sentinel_before) {
      v.outcome = Outcome::KernelTampered;
      v.tampered = layout::kSentinel;
    } else if (meta_before && !metadata_intact()) {
      v.outcome = Outcome::KernelTampered;
      for (const auto& im : images_)
        for (std::size_t m = 0; m < im->maps.size(); ++m)
          if (peek_u64(im->space, im->maps[m].meta_base) != helpers::kOpsSentinel) v.tampered = im->maps[m].meta_base;
    }
  }
  log(fmt::format("EXIT prog={} outcome={}", img.program.name, outcome_name(v.outcome)));
  trace_ = nullptr;
  v.trace = std::move(lines);
  return v;
}

std::vector<Verdict> Machine::attach_and_dispatch(std::span<ProgramImage* const> images,
                                                  const std::vector<std::vector<std::uint8_t>>& events) {
  std::vector<Verdict> out;
  out.reserve(images.size() * events.size());
  for (const auto& ev : events)
    for (auto* img : images) out.push_back(run(*img, ev));
  return out;
}

// ---------------------------------------------------------------------------

Counters Machine::counters() const {
  Counters c;
  c.pcid_conflict_flushes = conflict_flushes_;
  c.tlb_fills = mmu_.tlb().fills();
  c.cross_pcid_hits = mmu_.tlb().cross_pcid_hits();
  c.interrupts = interrupts_;
  c.handler_faults = handler_faults_;
  c.audit_violations = audit_violations_;
  for (auto k : mem::kAllFaultKinds) c.faults[std::string(mem::fault_kind_name(k))] = mmu_.fault_count(k);
  return c;
}

std::vector<std::uint8_t> Machine::map_bytes(const ProgramImage& img, std::size_t map) const {
  const auto& b = img.maps.at(map);
  const auto n = std::uint64_t{b.decl.value_size} * b.decl.n_entries;
  std::vector<std::uint8_t> out(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto va = b.data_base + i;
    const auto pte = mmu_.lookup_pte(img.space, va);
    out[i] = mmu_.phys().frame(pte->pfn)[mem::page_offset(va)];
  }
  return out;
}

std::uint8_t Machine::peek(std::uint64_t kernel_vaddr) const {
  const auto pte = mmu_.lookup_pte(kernel_space_, kernel_vaddr);
  return mmu_.phys().frame(pte->pfn)[mem::page_offset(kernel_vaddr)];
}

std::uint64_t Machine::peek_u64(mem::AsId as, std::uint64_t vaddr) const {
  const auto pte = mmu_.lookup_pte(as, vaddr);
  std::uint64_t v = 0;
  std::memcpy(&v, mmu_.phys().frame(pte->pfn).data() + mem::page_offset(vaddr), 8);
  return v;
}

bool Machine::metadata_intact() const {
  for (const auto& im : images_)
    for (auto f : im->meta_frames) {
      std::uint64_t v = 0;
      std::memcpy(&v, mmu_.phys().frame(f).data(), 8);
      if (v != helpers::kOpsSentinel) return false;
    }
  return true;
}

mem::PkrsState Machine::saved_pkrs() const {
  return mem::PkrsState(static_cast<std::uint32_t>(peek_u64(kernel_space_, layout::kSavedPkrs)));
}

void Machine::set_socket_fields(std::uint32_t mark, std::uint32_t priority) {
  auto& f = mmu_.phys().frame(kernel_frames_[2]);
  std::memcpy(f.data(), &mark, 4);
  std::memcpy(f.data() + 4, &priority, 4);
}

std::pair<std::uint32_t, std::uint32_t> Machine::socket_fields() const {
  const auto& f = mmu_.phys().frame(kernel_frames_[2]);
  std::uint32_t mark = 0, prio = 0;
  std::memcpy(&mark, f.data(), 4);
  std::memcpy(&prio, f.data() + 4, 4);
  return {mark, prio};
}

}  // namespace moat::runtime
