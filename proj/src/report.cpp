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

#include "moat/report.hpp"

#include <fmt/format.h>

namespace moat::report {

namespace {

std::string hex(std::uint64_t v) { return fmt::format("{:#x}", v); }

}  // namespace

Json verifier_json(const verifier::VerifierOutput& out) {
  Json j;
  j["accepted"] = out.accepted;
  j["reject_reason"] = out.reject ? Json(out.reject->to_string()) : Json(nullptr);
  Json sites = Json::array();
  for (const auto& [pc, site] : out.callsites) {
    Json args = Json::array();
    for (const auto& a : site.args) args.push_back({{"reg", a.reg}, {"umin", hex(a.range.umin)}, {"umax", hex(a.range.umax)}});
    sites.push_back({{"insn_index", pc}, {"helper", isa::helper_name(site.helper)}, {"args", args}});
  }
  j["callsites"] = sites;
  return j;
}

Json counters_json(const runtime::Counters& c) {
  Json faults = Json::object();
  for (const auto& [k, n] : c.faults) faults[k] = n;
  return {{"pcid_conflict_flushes", c.pcid_conflict_flushes}, {"tlb_fills", c.tlb_fills}, {"faults", faults}};
}

Json verdict_json(const runtime::Verdict& v, std::string_view scenario, const runtime::MoatConfig& cfg,
                  const runtime::Counters& counters) {
  using runtime::Outcome;
  Json detail = Json::object();
  switch (v.outcome) {
    case Outcome::Completed:
      detail["r0"] = hex(v.r0);
      break;
    case Outcome::VerifierReject:
      detail["reason"] = v.reason;
      break;
    case Outcome::DpaViolation:
      detail["insn"] = v.dpa->insn;
      detail["reg"] = v.dpa->reg;
      detail["value"] = hex(v.dpa->value);
      detail["range"] = {hex(v.dpa->range.umin), hex(v.dpa->range.umax)};
      break;
    case Outcome::KernelTampered:
      detail["address"] = hex(v.tampered.value_or(0));
      detail["r0"] = hex(v.r0);
      break;
    default:
      detail["insn"] = v.insn.value_or(0);
      detail["in_helper"] = v.in_helper;
      if (v.fault) {
        detail["kind"] = mem::fault_kind_name(v.fault->kind);
        detail["vaddr"] = hex(v.fault->vaddr);
        detail["pcid"] = v.fault->pcid;
        detail["access"] = std::string(1, mem::access_char(v.fault->access));
        detail["key"] = v.fault->key;
      }
      break;
  }
  Json j;
  j["scenario"] = scenario;
  j["protections"] = {{"pks", cfg.pks}, {"dpa", cfg.dpa}, {"cop", cfg.cop}, {"addr_space", cfg.addr_space}};
  j["outcome"] = runtime::outcome_name(v.outcome);
  j["detail"] = detail;
  j["counters"] = counters_json(counters);
  if (!v.trace.empty()) j["trace"] = v.trace;
  return j;
}

Json report_json(const scenario::Report& r) {
  Json cells = Json::array();
  for (const auto& c : r.cells) {
    auto j = verdict_json(c.verdict, r.name, c.cfg, c.counters);
    j["cell"] = c.label;
    j["expected"] = runtime::outcome_name(c.expected);
    j["pass"] = c.pass();
    if (!c.failed_checks.empty()) j["failed_checks"] = c.failed_checks;
    cells.push_back(std::move(j));
  }
  return {{"scenario", r.name}, {"pass", r.pass()}, {"cells", cells}};
}

}  // namespace moat::report
