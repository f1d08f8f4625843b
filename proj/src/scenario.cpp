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

#include "moat/scenario.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <functional>
#include <map>
#include <random>
#include <utility>

#include <fmt/format.h>

namespace moat::scenario {

using runtime::Machine;
using runtime::MoatConfig;
using runtime::Outcome;
using runtime::ProgramImage;

namespace {

// Generated from programs/*.bpf at configure time.
const std::map<std::string_view, std::string_view> kSources = {
#include "programs.inc"
};

}  // namespace

std::vector<std::string_view> program_names() {
  std::vector<std::string_view> out;
  for (const auto& [k, v] : kSources) out.push_back(k);
  return out;
}

std::string_view program_source(std::string_view name) {
  auto it = kSources.find(name);
  if (it == kSources.end()) throw std::invalid_argument(fmt::format("no bundled program '{}'", name));
  return it->second;
}

isa::Program program(std::string_view name) { return isa::assemble(program_source(name), std::string(name)); }

Packet packet_u64(std::uint64_t v, std::size_t size, std::uint8_t fill) {
  Packet p(std::max<std::size_t>(size, 8), fill);
  for (int i = 0; i < 8; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
  return p;
}

std::vector<Packet> benign_packets(std::size_t n, std::uint64_t seed) {
  static constexpr std::uint8_t kProtos[] = {1, 6, 17, 6, 17, 6};
  std::mt19937_64 rng(seed);
  std::vector<Packet> out;
  for (std::size_t i = 0; i < n; ++i) {
    Packet p(20 + rng() % 300);
    for (auto& b : p) b = static_cast<std::uint8_t>(rng());
    p[0] = 0x45;
    p[9] = kProtos[rng() % std::size(kProtos)];
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Packet> parse_packets(std::string_view text) {
  std::vector<Packet> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::string digits;
    for (char ch : line)
      if (!std::isspace(static_cast<unsigned char>(ch))) digits += ch;
    if (digits.empty()) continue;
    if (digits.size() % 2 != 0)
      throw std::invalid_argument(fmt::format("line {}: odd number of hex digits", line_no));
    Packet p;
    for (std::size_t i = 0; i < digits.size(); i += 2) {
      unsigned v = 0;
      auto [ptr, ec] = std::from_chars(digits.data() + i, digits.data() + i + 2, v, 16);
      if (ec != std::errc{} || ptr != digits.data() + i + 2)
        throw std::invalid_argument(fmt::format("line {}: bad hex byte '{}'", line_no, digits.substr(i, 2)));
      p.push_back(static_cast<std::uint8_t>(v));
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::uint64_t sentinel_offset(const ProgramImage& img) { return runtime::layout::kSentinel - (img.stack_top - 16); }

bool Report::pass() const {
  return !cells.empty() && std::all_of(cells.begin(), cells.end(), [](const Cell& c) { return c.pass(); });
}

namespace {

MoatConfig toggles(bool pks, bool dpa, bool cop, bool addr_space) {
  MoatConfig c;
  c.pks = pks;
  c.dpa = dpa;
  c.cop = cop;
  c.addr_space = addr_space;
  return c;
}

using InputFn = std::function<Packet(const ProgramImage&)>;

struct Single {
  std::string label;
  std::string prog;
  verifier::BugFlags flags;
  MoatConfig cfg;
  Outcome expected;
  InputFn input;
  const helpers::SignatureTable* sigs = &helpers::SignatureTable::standard();
};

Cell run_single(const Single& s, bool trace) {
  Cell c{s.label, s.cfg, s.flags, s.expected, {}, {}, {}};
  c.cfg.trace = trace;
  Machine m(c.cfg);
  auto loaded = m.load(program(s.prog), s.flags, *s.sigs);
  if (!loaded) {
    c.verdict = *loaded.rejected;
  } else {
    c.verdict = m.run(*loaded.image, s.input(*loaded.image));
    if (m.counters().handler_faults) c.failed_checks.push_back("interrupt handler faulted");
    if (c.cfg.all_on() && m.audit_violations())
      c.failed_checks.push_back(fmt::format("{} domain-confinement violations", m.audit_violations()));
  }
  c.counters = m.counters();
  return c;
}

Packet kernel_write_input(const ProgramImage& img) { return packet_u64(sentinel_offset(img)); }

const MoatConfig kOn = toggles(true, true, true, true);
const MoatConfig kOff = MoatConfig::all_off();

Report cve_2020_27194(bool trace) {
  const verifier::BugFlags bug{true, false, false};
  Report r{"cve-2020-27194", {}};
  r.cells.push_back(run_single({"or32 bug off", "cve-2020-27194", {}, kOn, Outcome::VerifierReject, kernel_write_input}, trace));
  auto on = run_single({"or32 bug on, protections on", "cve-2020-27194", bug, kOn, Outcome::PksViolation, kernel_write_input}, trace);
  // The fault must come from the store itself.
  if (on.verdict.insn != std::optional<std::size_t>{8}) on.failed_checks.push_back("fault not at the store (insn 8)");
  r.cells.push_back(std::move(on));
  r.cells.push_back(run_single({"or32 bug on, protections off", "cve-2020-27194", bug, kOff, Outcome::KernelTampered, kernel_write_input}, trace));
  return r;
}

Report cve_2022_23222(bool trace) {
  const verifier::BugFlags bug{false, true, false};
  Report r{"cve-2022-23222", {}};
  r.cells.push_back(run_single({"memnull bug off", "cve-2022-23222", {}, kOn, Outcome::VerifierReject, kernel_write_input}, trace));
  auto on = run_single({"memnull bug on, protections on", "cve-2022-23222", bug, kOn, Outcome::PksViolation, kernel_write_input}, trace);
  if (on.verdict.insn != std::optional<std::size_t>{14}) on.failed_checks.push_back("fault not at the store (insn 14)");
  r.cells.push_back(std::move(on));
  r.cells.push_back(run_single({"memnull bug on, protections off", "cve-2022-23222", bug, kOff, Outcome::KernelTampered, kernel_write_input}, trace));
  return r;
}

Report cve_2021_34866(bool trace) {
  const verifier::BugFlags bug{true, false, true};
  // Low 32 bits zero: the runtime map id is 0 (cfg), the deduced one 1 (stats).
  const InputFn input = [](const ProgramImage&) { return packet_u64(0x1'0000'0000ULL); };
  Report r{"cve-2021-34866", {}};
  r.cells.push_back(run_single({"bugs off", "cve-2021-34866", {}, kOn, Outcome::VerifierReject, input}, trace));
  r.cells.push_back(run_single({"dpa on", "cve-2021-34866", bug, kOn, Outcome::DpaViolation, input}, trace));
  r.cells.push_back(run_single({"dpa off, cop on", "cve-2021-34866", bug, toggles(true, false, true, true), Outcome::CopViolation, input}, trace));
  r.cells.push_back(run_single({"dpa off, cop off, pks on", "cve-2021-34866", bug, toggles(true, false, false, true), Outcome::PksViolation, input}, trace));
  r.cells.push_back(run_single({"all off", "cve-2021-34866", bug, kOff, Outcome::KernelTampered, input}, trace));
  r.cells.push_back(run_single({"dpa on, map id not forged", "cve-2021-34866-direct", bug, kOn, Outcome::CopViolation, input}, trace));
  return r;
}

Report dpa_four_cases(bool trace) {
  static const auto widened = helpers::SignatureTable::standard().with_expected(
      isa::HelperId::SkbLoad, 3, ValueRange::from_u64(0, 0xba));
  const InputFn input = [](const ProgramImage&) { return packet_u64(0xba, 256); };
  const verifier::BugFlags or32{true, false, false};
  Report r{"dpa-four-cases", {}};
  r.cells.push_back(run_single({"row 1 safe: R=D=0x10, E=[0,0x20]", "dpa-row1", {}, kOn, Outcome::Completed, input}, trace));
  r.cells.push_back(run_single({"row 2 verifier-mitigated: D=0xba, E=[0,0x20]", "dpa-row2", {}, kOn, Outcome::VerifierReject, input}, trace));
  r.cells.push_back(run_single({"row 3 moat-mitigated: R=0xba, D=0x10", "dpa-row3", or32, kOn, Outcome::DpaViolation, input}, trace));
  Single row4{"row 4 unsafe: R=D=0xba, E=[0,0xba]", "dpa-row4", {}, kOn, Outcome::KernelTampered, input};
  row4.sigs = &widened;
  r.cells.push_back(run_single(row4, trace));
  return r;
}

Cell intra_cell(const std::string& label, const MoatConfig& base, Outcome expected, bool victim_should_change, bool trace) {
  MoatConfig cfg = base;
  cfg.trace = trace;
  Cell c{label, cfg, {true, false, false}, expected, {}, {}, {}};
  Machine m(cfg);
  auto attacker = m.load(program("intra-attacker"), c.flags);
  auto victim = m.load(program("byte-counter"));
  if (!attacker || !victim) {
    c.verdict = attacker ? *victim.rejected : *attacker.rejected;
    return c;
  }
  for (const auto& p : benign_packets(4)) m.run(*victim.image, p);
  const auto before = m.map_bytes(*victim.image, 0);
  // Low 32 bits carry the distance from the attacker's value to the victim's
  // map; the high bits keep the value inside the checked bounds.
  const auto delta = victim.image->maps[0].data_base - attacker.image->maps[0].data_base;
  c.verdict = m.run(*attacker.image, packet_u64(0x1'0000'0000ULL + delta));
  const bool changed = m.map_bytes(*victim.image, 0) != before;
  if (changed != victim_should_change)
    c.failed_checks.push_back(victim_should_change ? "victim map unchanged" : "victim map modified");
  for (const auto& p : benign_packets(2, 7))
    if (m.run(*victim.image, p).outcome != Outcome::Completed) c.failed_checks.push_back("victim stopped completing");
  c.counters = m.counters();
  return c;
}

Report intra_bpf_tamper(bool trace) {
  Report r{"intra-bpf-tamper", {}};
  r.cells.push_back(intra_cell("address spaces on", kOn, Outcome::PageFault, false, trace));
  r.cells.push_back(intra_cell("address spaces off", toggles(true, true, true, false), Outcome::Completed, true, trace));
  return r;
}

// Runs one program with an interrupt after each instruction count in turn
// and requires the verdict to match the interrupt-free run.
Cell irq_cell(const std::string& label, const std::string& prog, verifier::BugFlags flags, Outcome expected,
              const InputFn& input) {
  Cell c{label, kOn, flags, expected, {}, {}, {}};
  auto run_with = [&](std::optional<std::uint64_t> at, runtime::Counters* counters) {
    MoatConfig cfg = kOn;
    cfg.interrupt_at = at;
    Machine m(cfg);
    auto loaded = m.load(program(prog), flags);
    runtime::Verdict v = loaded ? m.run(*loaded.image, input(*loaded.image)) : *loaded.rejected;
    if (counters) *counters = m.counters();
    return v;
  };
  const auto base = run_with(std::nullopt, nullptr);
  const auto n = program(prog).insns.size();
  std::uint64_t fired = 0;
  for (std::uint64_t k = 1; k <= n + 1; ++k) {
    runtime::Counters cn;
    auto v = run_with(k, &cn);
    fired += cn.interrupts;
    if (cn.handler_faults) c.failed_checks.push_back(fmt::format("handler faulted at k={}", k));
    if (v.outcome != base.outcome || v.r0 != base.r0 || v.insn != base.insn)
      c.failed_checks.push_back(fmt::format("k={}: {} vs {}", k, v.summary(), base.summary()));
    c.counters = cn;
  }
  if (fired == 0) c.failed_checks.push_back("no interrupt fired");
  c.verdict = base;
  return c;
}

Report irq_during_bpf(bool) {
  Report r{"irq-during-bpf", {}};
  const InputFn benign = [](const ProgramImage&) { return benign_packets(1)[0]; };
  r.cells.push_back(irq_cell("byte-counter", "byte-counter", {}, Outcome::Completed, benign));
  r.cells.push_back(irq_cell("cve-2020-27194", "cve-2020-27194", {true, false, false}, Outcome::PksViolation, kernel_write_input));
  r.cells.push_back(irq_cell("cve-2022-23222", "cve-2022-23222", {false, true, false}, Outcome::PksViolation, kernel_write_input));
  r.cells.push_back(irq_cell("cve-2021-34866", "cve-2021-34866", {true, false, true}, Outcome::DpaViolation,
                             [](const ProgramImage&) { return packet_u64(0x1'0000'0000ULL); }));
  return r;
}

Cell pcid_cell(unsigned bits, std::size_t n_programs, bool expect_conflicts, bool trace) {
  MoatConfig cfg = kOn;
  cfg.pcid_bits = bits;
  cfg.trace = trace;
  Cell c{fmt::format("pcid_bits={} with {} programs", bits, n_programs), cfg, {}, Outcome::Completed, {}, {}, {}};
  Machine m(cfg);
  std::vector<ProgramImage*> imgs;
  for (std::size_t i = 0; i < n_programs; ++i) imgs.push_back(m.load(program("byte-counter")).image);
  const auto verdicts = m.attach_and_dispatch(imgs, benign_packets(20));
  for (const auto& v : verdicts)
    if (v.outcome != Outcome::Completed) {
      c.verdict = v;
      break;
    }
  c.counters = m.counters();
  if (expect_conflicts != (c.counters.pcid_conflict_flushes > 0))
    c.failed_checks.push_back(fmt::format("pcid_conflict_flushes={}", c.counters.pcid_conflict_flushes));
  if (c.counters.cross_pcid_hits) c.failed_checks.push_back("cross-pcid TLB hit");
  if (m.audit_violations()) c.failed_checks.push_back("domain-confinement violation");
  return c;
}

Report pcid_conflict(bool trace) {
  Report r{"pcid-conflict", {}};
  r.cells.push_back(pcid_cell(2, 5, true, trace));
  r.cells.push_back(pcid_cell(12, 5, false, trace));
  return r;
}

using Runner = Report (*)(bool);
const std::vector<std::pair<std::string_view, Runner>> kScenarios = {
    {"cve-2022-23222", cve_2022_23222},   {"cve-2020-27194", cve_2020_27194},
    {"cve-2021-34866", cve_2021_34866},   {"intra-bpf-tamper", intra_bpf_tamper},
    {"irq-during-bpf", irq_during_bpf},   {"pcid-conflict", pcid_conflict},
    {"dpa-four-cases", dpa_four_cases},
};

}  // namespace

std::vector<std::string_view> scenario_names() {
  std::vector<std::string_view> out;
  for (const auto& [n, f] : kScenarios) out.push_back(n);
  return out;
}

Report run_scenario(std::string_view name, bool trace) {
  for (const auto& [n, f] : kScenarios)
    if (n == name) return f(trace);
  throw UnknownScenario(fmt::format("unknown scenario '{}'", name));
}

}  // namespace moat::scenario
