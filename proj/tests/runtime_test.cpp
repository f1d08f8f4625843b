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

#include <cstring>
#include <set>

#include <gtest/gtest.h>

#include "moat/runtime.hpp"
#include "moat/scenario.hpp"

using namespace moat;
using namespace moat::runtime;
using mem::Access;
using mem::FaultKind;
using mem::KeyPerm;
using scenario::packet_u64;
using scenario::program;

namespace {

const verifier::BugFlags kOr32{true, false, false};
const verifier::BugFlags kMemNull{false, true, false};
const verifier::BugFlags kMapMis{true, false, true};

ProgramImage& must_load(Machine& m, std::string_view name, const verifier::BugFlags& f = {}) {
  auto r = m.load(program(name), f);
  if (!r) throw std::runtime_error(std::string(name) + " rejected: " + r.rejected->reason);
  return *r.image;
}

std::vector<std::uint8_t> kernel_page(const Machine& m, std::uint64_t base) {
  std::vector<std::uint8_t> out;
  for (std::uint64_t a = base; a < base + mem::kPageSize; ++a) out.push_back(m.peek(a));
  return out;
}

}  // namespace

TEST(Domains, Tables) {
  const MoatConfig on;
  const auto b = bpf_pkrs(on);
  EXPECT_EQ(b.get(0), KeyPerm::AD);
  EXPECT_EQ(b.get(1), KeyPerm::AE);
  EXPECT_EQ(b.get(2), KeyPerm::WD);
  EXPECT_EQ(b.get(3), KeyPerm::AD);
  for (int k = 4; k < 16; ++k) EXPECT_EQ(b.get(k), KeyPerm::AD) << k;

  const auto h = helper_pkrs(on);
  EXPECT_EQ(h.get(0), KeyPerm::AE);
  EXPECT_EQ(h.get(1), KeyPerm::AE);
  EXPECT_EQ(h.get(3), KeyPerm::AD);
  MoatConfig no_cop;
  no_cop.cop = false;
  EXPECT_EQ(helper_pkrs(no_cop).get(3), KeyPerm::AE);

  for (int k = 0; k < 16; ++k) EXPECT_EQ(kernel_pkrs().get(k), KeyPerm::AE);
}

TEST(Load, BenignImageLayout) {
  Machine m;
  auto& img = must_load(m, "byte-counter");
  const auto as = img.space;
  EXPECT_EQ(img.window_base, layout::kBpfBase);
  EXPECT_EQ(img.stack_top - img.stack_base, 512u);
  EXPECT_EQ(img.stack_top, layout::kBpfBase + 0x1200);
  EXPECT_FALSE(m.mmu().lookup_pte(as, img.window_base)) << "guard page below the stack";
  ASSERT_EQ(img.maps.size(), 1u);
  ASSERT_TRUE(img.ctx);
  EXPECT_EQ(img.ctx->range().pages, 2u);

  for (std::uint64_t va = img.code_base; va < img.code_base + img.code_pages * mem::kPageSize; va += mem::kPageSize) {
    const auto pte = m.mmu().lookup_pte(as, va);
    ASSERT_TRUE(pte);
    EXPECT_TRUE(pte->executable);
    EXPECT_FALSE(pte->writable);
  }
  // Everything the window maps is either BPF-owned or critical metadata.
  for (std::size_t p = 0; p < layout::kWindowPages; ++p) {
    const auto pte = m.mmu().lookup_pte(as, img.window_base + p * mem::kPageSize);
    if (pte) EXPECT_TRUE(pte->key == kKeyBpf || pte->key == kKeyCritical) << "page " << p;
  }
  EXPECT_EQ(m.mmu().lookup_pte(as, img.maps[0].meta_base)->key, kKeyCritical);
  EXPECT_EQ(m.mmu().lookup_pte(as, layout::kSentinel)->key, kKeyKernel);
  EXPECT_EQ(m.mmu().lookup_pte(as, layout::kSharedDesc)->key, kKeyShared);
  EXPECT_EQ(m.peek(layout::kSentinel), layout::kSentinelValue);
  EXPECT_TRUE(m.metadata_intact());
}

TEST(Load, DistinctPcidsAndDisjointWindows) {
  Machine m;
  std::set<std::uint32_t> pcids;
  std::set<mem::Pfn> frames;
  std::size_t total = 0;
  for (int i = 0; i < 128; ++i) {
    auto& img = must_load(m, "byte-counter");
    EXPECT_NE(img.pcid, 0u);
    pcids.insert(img.pcid);
    EXPECT_EQ(img.window_base, layout::window_base(static_cast<std::size_t>(i)));
    for (auto f : img.pages->frames()) frames.insert(f);
    total += img.pages->frames().size();
  }
  EXPECT_EQ(pcids.size(), 128u);
  EXPECT_EQ(frames.size(), total) << "a frame is shared between programs";
}

TEST(Load, RejectIsAVerdict) {
  Machine m;
  auto r = m.load(program("cve-2020-27194"));
  ASSERT_FALSE(r);
  EXPECT_EQ(r.rejected->outcome, Outcome::VerifierReject);
  EXPECT_FALSE(r.rejected->reason.empty());
  EXPECT_EQ(m.num_images(), 0u);
}

TEST(Switch, EnterExitIsAnInvolution) {
  Machine m;
  auto& img = must_load(m, "byte-counter");
  const auto before = m.switch_state();
  m.enter_bpf(img, scenario::benign_packets(1)[0]);
  EXPECT_TRUE(m.cpu().in_bpf);
  EXPECT_EQ(m.mmu().pkrs(), img.entry_pkrs);
  EXPECT_EQ(m.mmu().active_pcid(), img.pcid);
  EXPECT_EQ(m.cpu().stack_cursor, img.stack_top);
  m.exit_bpf(img);
  EXPECT_EQ(m.switch_state(), before);
}

TEST(Switch, BpfDomainView) {
  Machine m;
  auto& img = must_load(m, "byte-counter");
  m.enter_bpf(img);
  std::uint8_t b = 0;
  auto f = m.mmu().access(layout::kSentinel, 1, Access::Read, &b);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->kind, FaultKind::PkAccessDisabled);
  f = m.mmu().access(layout::kSharedDesc, 1, Access::Write, &b);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->kind, FaultKind::PkWriteDisabled);
  EXPECT_FALSE(m.mmu().access(layout::kSharedDesc, 1, Access::Read, &b));
  EXPECT_FALSE(m.mmu().access(img.stack_top - 1, 1, Access::Write, &b));
  f = m.mmu().access(img.maps[0].meta_base, 1, Access::Read, &b);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->key, kKeyCritical);
  m.exit_bpf(img);
}

TEST(Switch, Errors) {
  Machine m;
  auto& img = must_load(m, "byte-counter");
  try {
    m.exit_bpf(img);
    FAIL();
  } catch (const RuntimeError& e) {
    EXPECT_EQ(e.kind(), RuntimeError::Kind::NotInBpf);
  }
  m.enter_bpf(img);
  try {
    m.enter_bpf(img);
    FAIL();
  } catch (const RuntimeError& e) {
    EXPECT_EQ(e.kind(), RuntimeError::Kind::ReentrantEntry);
  }
  EXPECT_THROW(m.call_helper(img, static_cast<isa::HelperId>(42), {}), RuntimeError);
  m.exit_bpf(img);
}

TEST(Run, ExitOnly) {
  Machine m;
  auto& img = must_load(m, "exit-only");
  const auto v = m.run(img, {});
  EXPECT_EQ(v.outcome, Outcome::Completed);
  EXPECT_EQ(v.r0, 0u);
  EXPECT_FALSE(m.cpu().in_bpf);
}

TEST(Run, ByteCounterTotals) {
  Machine m;
  auto& img = must_load(m, "byte-counter");
  std::map<std::uint8_t, std::uint64_t> want;
  for (const auto& p : scenario::benign_packets(50)) {
    want[p[9]] += p.size();
    ASSERT_EQ(m.run(img, p).outcome, Outcome::Completed);
  }
  const auto bytes = m.map_bytes(img, 0);
  for (int proto = 0; proto < 256; ++proto) {
    std::uint64_t got = 0;
    std::memcpy(&got, bytes.data() + proto * 8, 8);
    EXPECT_EQ(got, want.count(static_cast<std::uint8_t>(proto)) ? want[static_cast<std::uint8_t>(proto)] : 0u)
        << "proto " << proto;
  }
}

TEST(Run, TracepointSeesEvent) {
  Machine m;
  auto r = m.load(isa::assemble(".type tracepoint\nldx1 r0, [r1+3]\nexit", "tp"));
  ASSERT_TRUE(r) << r.rejected->reason;
  const std::vector<std::uint8_t> ev = {1, 2, 3, 0x77, 5};
  EXPECT_EQ(m.run(*r.image, ev).r0, 0x77u);
}

TEST(Run, SocketMirrorCopiesBack) {
  Machine m;
  auto r = m.load(isa::assemble("ldx4 r2, [r1+4096]\nadd r2, 1\nstx4 [r1+4096], r2\nmov r0, r2\nexit", "mark"));
  ASSERT_TRUE(r) << r.rejected->reason;
  m.set_socket_fields(41, 9);
  const auto v = m.run(*r.image, scenario::benign_packets(1)[0]);
  ASSERT_EQ(v.outcome, Outcome::Completed);
  EXPECT_EQ(v.r0, 42u);
  EXPECT_EQ(m.socket_fields(), std::make_pair(42u, 9u));
}

TEST(Run, Cve27194Contained) {
  Machine m;
  auto& img = must_load(m, "cve-2020-27194", kOr32);
  const auto before = kernel_page(m, layout::kKernelData);
  const auto v = m.run(img, packet_u64(scenario::sentinel_offset(img)));
  EXPECT_EQ(v.outcome, Outcome::PksViolation);
  ASSERT_TRUE(v.fault);
  EXPECT_EQ(v.fault->vaddr, layout::kSentinel);
  EXPECT_EQ(v.fault->key, kKeyKernel);
  EXPECT_TRUE(v.fault->is_pk());
  EXPECT_EQ(kernel_page(m, layout::kKernelData), before);
  EXPECT_EQ(m.audit_violations(), 0u);
}

TEST(Run, Cve27194TampersWithoutProtection) {
  Machine m(MoatConfig::all_off());
  auto& img = must_load(m, "cve-2020-27194", kOr32);
  const auto v = m.run(img, packet_u64(scenario::sentinel_offset(img)));
  EXPECT_EQ(v.outcome, Outcome::KernelTampered);
  EXPECT_NE(m.peek(layout::kSentinel), layout::kSentinelValue);
}

TEST(Run, Cve23222Contained) {
  Machine m;
  auto& img = must_load(m, "cve-2022-23222", kMemNull);
  const auto v = m.run(img, packet_u64(scenario::sentinel_offset(img)));
  EXPECT_EQ(v.outcome, Outcome::PksViolation);
  EXPECT_EQ(m.peek(layout::kSentinel), layout::kSentinelValue);
}

TEST(Run, Cve34866Layers) {
  {
    Machine m;
    auto& img = must_load(m, "cve-2021-34866", kMapMis);
    const auto v = m.run(img, packet_u64(0x1'0000'0000ULL));
    ASSERT_EQ(v.outcome, Outcome::DpaViolation);
    ASSERT_TRUE(v.dpa);
    EXPECT_EQ(v.dpa->reg, 1);
    EXPECT_FALSE(v.dpa->range.contains(v.dpa->value));
  }
  {
    MoatConfig cfg;
    cfg.dpa = false;
    Machine m(cfg);
    auto& img = must_load(m, "cve-2021-34866", kMapMis);
    const auto v = m.run(img, packet_u64(0x1'0000'0000ULL));
    ASSERT_EQ(v.outcome, Outcome::CopViolation);
    EXPECT_TRUE(v.in_helper);
    EXPECT_EQ(v.fault->key, kKeyCritical);
    EXPECT_TRUE(m.metadata_intact());
  }
}

// An out-of-window store lands in an address this program's space does not
// map at all.
TEST(Run, CrossProgramProbeFaults) {
  Machine m;
  auto& attacker = must_load(m, "intra-attacker", kOr32);
  auto& victim = must_load(m, "byte-counter");
  for (const auto& p : scenario::benign_packets(3)) m.run(victim, p);
  const auto before = m.map_bytes(victim, 0);
  const auto delta = victim.maps[0].data_base - attacker.maps[0].data_base;
  const auto v = m.run(attacker, packet_u64(0x1'0000'0000ULL + delta));
  EXPECT_EQ(v.outcome, Outcome::PageFault);
  ASSERT_TRUE(v.fault);
  EXPECT_EQ(v.fault->vaddr, victim.maps[0].data_base);
  EXPECT_EQ(m.map_bytes(victim, 0), before);
}

TEST(Helpers, MapLookupReturnsBpfMemory) {
  Machine m;
  auto& img = must_load(m, "byte-counter");
  m.enter_bpf(img);
  const auto r = m.call_helper(img, isa::HelperId::MapLookup, {0, 17, 0, 0, 0});
  EXPECT_FALSE(r.fault);
  EXPECT_EQ(r.r0, img.maps[0].data_base + 17 * 8);
  EXPECT_EQ(m.mmu().lookup_pte(img.space, r.r0)->key, kKeyBpf);
  EXPECT_EQ(m.mmu().pkrs(), img.entry_pkrs) << "helper restores the BPF domain";
  EXPECT_EQ(m.call_helper(img, isa::HelperId::MapLookup, {0, 256, 0, 0, 0}).r0, 0u);
  m.exit_bpf(img);
}

TEST(Helpers, SkbLoadUsesKernelBounce) {
  Machine m;
  auto& img = must_load(m, "byte-counter");
  auto pkt = scenario::benign_packets(1)[0];
  m.enter_bpf(img, pkt);
  const auto r = m.call_helper(img, isa::HelperId::SkbLoad, {img.ctx_addr(), 9, img.stack_top - 8, 1, 0});
  EXPECT_FALSE(r.fault);
  EXPECT_EQ(r.r0, 0u);
  EXPECT_EQ(m.peek_u64(img.space, img.stack_top - 8) & 0xff, pkt[9]);
  m.exit_bpf(img);
}

TEST(Interrupt, HandlerRunsWhileBpfStaysConfined) {
  Machine m;
  auto& img = must_load(m, "byte-counter");
  m.enter_bpf(img);
  const auto pkrs = m.mmu().pkrs();
  m.fire_interrupt();
  EXPECT_EQ(m.counters().interrupts, 1u);
  EXPECT_EQ(m.counters().handler_faults, 0u);
  EXPECT_EQ(m.mmu().pkrs(), pkrs);
  std::uint8_t b;
  auto f = m.mmu().access(layout::kSentinel, 1, Access::Read, &b);
  ASSERT_TRUE(f);
  EXPECT_EQ(f->kind, FaultKind::PkAccessDisabled);
  m.exit_bpf(img);
}

TEST(Interrupt, OutsideBpfLeavesPkrs) {
  Machine m;
  const auto before = m.switch_state();
  m.fire_interrupt();
  EXPECT_EQ(m.switch_state(), before);
  EXPECT_EQ(m.counters().handler_faults, 0u);
}

TEST(Interrupt, MidProgramDoesNotChangeVerdict) {
  const auto run_at = [](std::optional<std::uint64_t> at) {
    MoatConfig cfg;
    cfg.interrupt_at = at;
    Machine m(cfg);
    auto& img = must_load(m, "cve-2020-27194", kOr32);
    auto v = m.run(img, packet_u64(scenario::sentinel_offset(img)));
    return std::make_tuple(v.outcome, v.insn, m.counters().interrupts, m.counters().handler_faults);
  };
  const auto [o0, i0, n0, h0] = run_at(std::nullopt);
  EXPECT_EQ(n0, 0u);
  const auto [o1, i1, n1, h1] = run_at(5);
  EXPECT_EQ(o1, o0);
  EXPECT_EQ(i1, i0);
  EXPECT_EQ(n1, 1u);
  EXPECT_EQ(h1, 0u);
  const auto [o2, i2, n2, h2] = run_at(1000);
  EXPECT_EQ(o2, o0);
  EXPECT_EQ(n2, 0u) << "counter never reaches the trigger";
}

TEST(Dispatch, TwoImagesManyEvents) {
  Machine m;
  std::vector<ProgramImage*> imgs = {&must_load(m, "byte-counter"), &must_load(m, "byte-counter")};
  const auto verdicts = m.attach_and_dispatch(imgs, scenario::benign_packets(100));
  ASSERT_EQ(verdicts.size(), 200u);
  for (const auto& v : verdicts) EXPECT_EQ(v.outcome, Outcome::Completed);
  EXPECT_EQ(m.map_bytes(*imgs[0], 0), m.map_bytes(*imgs[1], 0));
  EXPECT_EQ(m.counters().cross_pcid_hits, 0u);
  EXPECT_EQ(m.counters().pcid_conflict_flushes, 0u);
}

TEST(Dispatch, NarrowPcidsConflictButStayCorrect) {
  MoatConfig cfg;
  cfg.pcid_bits = 2;
  Machine m(cfg);
  std::vector<ProgramImage*> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(&must_load(m, "byte-counter"));
  const auto verdicts = m.attach_and_dispatch(imgs, scenario::benign_packets(20));
  for (const auto& v : verdicts) EXPECT_EQ(v.outcome, Outcome::Completed) << v.summary();
  EXPECT_GT(m.counters().pcid_conflict_flushes, 0u);
  EXPECT_EQ(m.counters().cross_pcid_hits, 0u);
  for (auto* img : imgs) EXPECT_EQ(m.map_bytes(*img, 0), m.map_bytes(*imgs[0], 0));
}

TEST(Toggles, PksOffLeavesKernelWritable) {
  MoatConfig cfg;
  cfg.pks = false;
  Machine m(cfg);
  auto& img = must_load(m, "cve-2020-27194", kOr32);
  const auto v = m.run(img, packet_u64(scenario::sentinel_offset(img)));
  EXPECT_EQ(v.outcome, Outcome::KernelTampered);
  ASSERT_TRUE(v.tampered);
  EXPECT_EQ(*v.tampered, layout::kSentinel);
}

TEST(Toggles, SharedSpaceWithoutAddressSpaces) {
  MoatConfig cfg;
  cfg.addr_space = false;
  Machine m(cfg);
  auto& a = must_load(m, "byte-counter");
  auto& b = must_load(m, "byte-counter");
  EXPECT_EQ(a.space, b.space);
  EXPECT_EQ(m.peek_u64(a.space, b.maps[0].data_base), 0u);
}
