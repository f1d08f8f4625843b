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

// The isolating runtime: loads verified programs into their own windows and
// address spaces, switches PKS domains around BPF code and helper calls,
// runs DPA guards and interprets the program.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "moat/alloc.hpp"
#include "moat/helpers.hpp"
#include "moat/isa.hpp"
#include "moat/mem.hpp"
#include "moat/verifier.hpp"

namespace moat::runtime {

inline constexpr std::uint8_t kKeyKernel = 0x0;
inline constexpr std::uint8_t kKeyBpf = 0x1;
inline constexpr std::uint8_t kKeyShared = 0x2;
inline constexpr std::uint8_t kKeyCritical = 0x3;

// Fixed virtual layout. The kernel region is mapped into every address space.
namespace layout {
inline constexpr std::uint64_t kKernelBase = 0x5'0000'0000ULL;
inline constexpr std::uint64_t kKernelData = kKernelBase;            // key 0
inline constexpr std::uint64_t kBounceBuffer = kKernelData + 0x100;  // skb_load staging
inline constexpr std::uint64_t kSentinel = kKernelData + 0x120;      // 1 byte
inline constexpr std::uint64_t kKernelScratch = kKernelBase + 0x1000;
inline constexpr std::uint64_t kSocketObject = kKernelBase + 0x2000;
inline constexpr std::uint64_t kPacketFrame = kKernelBase + 0x3000;
inline constexpr std::uint64_t kSharedDesc = kKernelBase + 0x4000;   // key 2
inline constexpr std::uint64_t kSavedPkrs = kKernelBase + 0x5000;    // key 3
inline constexpr std::size_t kKernelPages = 6;

inline constexpr std::uint8_t kSentinelValue = 0x5a;
inline constexpr std::uint64_t kKernelStackTop = 0xffff'c900'0000'4000ULL;

inline constexpr std::uint64_t kBpfBase = 0x1'0000'0000ULL;
inline constexpr std::uint64_t kWindowBytes = 16ULL << 20;
inline constexpr std::size_t kWindowPages = kWindowBytes / mem::kPageSize;
inline constexpr std::size_t kMaxPrograms = 1024;

// Socket filter context: u32 packet length, then packet bytes from offset 8;
// the mirrored socket fields follow on the next page.
inline constexpr std::uint64_t kPacketDataOffset = 8;
inline constexpr std::size_t kMaxPacketBytes = mem::kPageSize - kPacketDataOffset;
inline constexpr std::uint64_t kMirrorBytes = 8;  // sk.mark, sk.priority

constexpr std::uint64_t window_base(std::size_t index) { return kBpfBase + index * kWindowBytes; }
}  // namespace layout

struct MoatConfig {
  bool pks = true;
  bool dpa = true;
  bool cop = true;
  bool addr_space = true;
  unsigned pcid_bits = 12;
  std::optional<std::uint64_t> interrupt_at;
  std::size_t tlb_capacity = 256;
  bool trace = false;

  bool all_on() const { return pks && dpa && cop && addr_space; }
  static MoatConfig all_off() {
    MoatConfig c;
    c.pks = c.dpa = c.cop = c.addr_space = false;
    return c;
  }
};

mem::PkrsState kernel_pkrs();
mem::PkrsState bpf_pkrs(const MoatConfig& cfg);
mem::PkrsState helper_pkrs(const MoatConfig& cfg);

enum class Outcome { Completed, VerifierReject, DpaViolation, PksViolation, PageFault, CopViolation, KernelTampered };
inline constexpr Outcome kAllOutcomes[] = {Outcome::Completed,    Outcome::VerifierReject, Outcome::DpaViolation,
                                           Outcome::PksViolation, Outcome::PageFault,      Outcome::CopViolation,
                                           Outcome::KernelTampered};
// snake_case names used in JSON.
std::string_view outcome_name(Outcome o);
std::optional<Outcome> outcome_by_name(std::string_view name);
int exit_code(Outcome o);

struct DpaFailure {
  std::size_t insn = 0;
  int reg = 0;
  std::uint64_t value = 0;
  ValueRange range;
};

struct Verdict {
  Outcome outcome = Outcome::Completed;
  std::uint64_t r0 = 0;
  std::string reason;                // VerifierReject
  std::optional<mem::Fault> fault;   // Pks/Page/Cop
  std::optional<std::size_t> insn;   // faulting or guarded instruction
  bool in_helper = false;            // fault raised inside a helper body
  std::optional<DpaFailure> dpa;
  std::optional<std::uint64_t> tampered;  // address of the modified sentinel
  std::vector<std::string> trace;

  std::string summary() const;
};

class RuntimeError : public std::runtime_error {
 public:
  enum class Kind { ReentrantEntry, NotInBpf, UnknownHelper, LoadFailure };
  RuntimeError(Kind k, const std::string& what) : std::runtime_error(what), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Guard {
  int reg = 0;
  ValueRange range;
};

struct ProgramImage {
  std::size_t index = 0;
  isa::Program program;
  verifier::BugFlags flags;
  mem::AsId space = 0;
  std::uint32_t pcid = 0;

  std::uint64_t window_base = 0;
  std::uint64_t stack_base = 0;  // lowest stack byte
  std::uint64_t stack_top = 0;   // initial r10
  std::uint64_t code_base = 0;
  std::size_t code_pages = 0;
  std::vector<helpers::MapBinding> maps;
  std::vector<mem::Pfn> meta_frames;  // critical pool, one per map
  std::optional<alloc::VirtReservation> ctx;  // socket filters: packet alias + mirror
  mem::Pfn mirror_frame = 0;

  std::map<std::size_t, verifier::Callsite> callsites;
  std::map<std::size_t, std::vector<Guard>> guards;  // keyed by CALL index
  mem::PkrsState entry_pkrs;
  bool defect_armed = false;

  std::unique_ptr<alloc::LayoutWindow> window;
  std::unique_ptr<alloc::PagePool> pages;
  std::unique_ptr<alloc::ObjectPool> objects;

  std::uint64_t ctx_addr() const { return ctx ? ctx->range().base : stack_base; }
  // Instrumented listing: the program with GUARD pseudo-instructions.
  std::string listing() const;
};

struct CpuState {
  bool in_bpf = false;
  std::uint64_t stack_cursor = layout::kKernelStackTop;
  std::uint64_t saved_stack_cursor = 0;
  std::uint64_t instruction_counter = 0;
  std::optional<std::uint64_t> pending_interrupt_at;
};

enum class AccessContext { Runtime, Bpf, Helper, Interrupt };

struct Counters {
  std::uint64_t pcid_conflict_flushes = 0;
  std::uint64_t tlb_fills = 0;
  std::uint64_t cross_pcid_hits = 0;
  std::uint64_t interrupts = 0;
  std::uint64_t handler_faults = 0;
  std::uint64_t audit_violations = 0;
  std::map<std::string, std::uint64_t> faults;  // by fault kind
};

// State that enter/exit must restore.
struct SwitchState {
  mem::PkrsState pkrs;
  mem::AsId space = 0;
  std::uint32_t pcid = 0;
  std::uint64_t stack_cursor = 0;
  bool in_bpf = false;
  friend bool operator==(const SwitchState&, const SwitchState&) = default;
};

// Process-wide tallies over every Machine, for suite-level assertions.
struct ShadowTotals {
  std::uint64_t runs = 0;
  std::uint64_t audit_violations = 0;
  std::uint64_t involution_breaks = 0;  // run() left switch state changed
};
ShadowTotals shadow_totals();

class Machine {
 public:
  explicit Machine(MoatConfig cfg = {});
  Machine(const Machine&) = delete;
  Machine& operator=(const Machine&) = delete;

  struct LoadResult {
    ProgramImage* image = nullptr;
    std::optional<Verdict> rejected;
    explicit operator bool() const { return image != nullptr; }
  };
  LoadResult load(const isa::Program& prog, const verifier::BugFlags& flags = {},
                  const helpers::SignatureTable& sigs = helpers::SignatureTable::standard());

  void enter_bpf(ProgramImage& img, std::span<const std::uint8_t> event = {});
  void exit_bpf(ProgramImage& img);
  Verdict run(ProgramImage& img, std::span<const std::uint8_t> event);
  helpers::HelperResult call_helper(ProgramImage& img, isa::HelperId id, const std::array<std::uint64_t, 5>& args);
  void fire_interrupt();
  std::vector<Verdict> attach_and_dispatch(std::span<ProgramImage* const> images,
                                           const std::vector<std::vector<std::uint8_t>>& events);

  const MoatConfig& config() const { return cfg_; }
  mem::Mmu& mmu() { return mmu_; }
  const mem::Mmu& mmu() const { return mmu_; }
  CpuState& cpu() { return cpu_; }
  mem::AsId kernel_space() const { return kernel_space_; }
  SwitchState switch_state() const;
  Counters counters() const;
  std::size_t num_images() const { return images_.size(); }
  ProgramImage& image(std::size_t i) { return *images_.at(i); }

  // Oracle views that bypass translation.
  std::vector<std::uint8_t> map_bytes(const ProgramImage& img, std::size_t map) const;
  std::uint8_t peek(std::uint64_t kernel_vaddr) const;
  std::uint64_t peek_u64(mem::AsId as, std::uint64_t vaddr) const;
  bool metadata_intact() const;
  mem::PkrsState saved_pkrs() const;

  void set_socket_fields(std::uint32_t mark, std::uint32_t priority);
  std::pair<std::uint32_t, std::uint32_t> socket_fields() const;

  // Audit of successful accesses made while BPF code was executing that
  // escaped the BPF domain.
  std::uint64_t audit_violations() const { return audit_violations_; }
  std::uint64_t involution_breaks() const { return involution_breaks_; }
  const std::vector<mem::AccessRecord>& audit_log() const { return audit_samples_; }

 private:
  mem::AsId new_space(std::uint32_t pcid);
  void switch_to(mem::AsId space, std::uint32_t pcid, std::string* note);
  void on_access(const mem::AccessRecord& r);
  void log(std::string line);
  std::optional<Verdict> exec(ProgramImage& img, std::array<std::uint64_t, 11>& regs);
  Verdict fault_verdict(const mem::Fault& f, std::size_t insn, bool in_helper) const;

  MoatConfig cfg_;
  mem::Mmu mmu_;
  CpuState cpu_;
  mem::AsId kernel_space_ = 0;
  std::optional<mem::AsId> shared_space_;
  std::array<mem::Pfn, layout::kKernelPages> kernel_frames_{};
  std::map<std::uint32_t, mem::AsId> pcid_owner_;
  std::vector<std::unique_ptr<ProgramImage>> images_;
  std::uint64_t conflict_flushes_ = 0;
  std::uint64_t interrupts_ = 0;
  std::uint64_t handler_faults_ = 0;
  AccessContext context_ = AccessContext::Runtime;
  std::uint64_t audit_violations_ = 0;
  std::uint64_t involution_breaks_ = 0;
  std::vector<mem::AccessRecord> audit_samples_;
  std::vector<std::string>* trace_ = nullptr;
};

}  // namespace moat::runtime
