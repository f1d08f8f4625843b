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

// moatsim: assemble, verify and run programs under the isolating runtime,
// or replay the built-in attack scenarios.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "moat/isa.hpp"
#include "moat/report.hpp"
#include "moat/runtime.hpp"
#include "moat/scenario.hpp"
#include "moat/verifier.hpp"

namespace {

using moat::report::Json;

constexpr int kExitReject = 1;
constexpr int kExitParse = 2;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

moat::verifier::BugFlags parse_bugs(const std::vector<std::string>& names) {
  moat::verifier::BugFlags f;
  for (const auto& n : names) {
    if (n == "or32") f.or32_truncation = true;
    else if (n == "memnull") f.mem_or_null_untracked = true;
    else if (n == "mapmischeck") f.helper_map_mischeck = true;
  }
  return f;
}

Json map_dump(const moat::runtime::Machine& m, const moat::runtime::ProgramImage& img) {
  Json maps = Json::object();
  for (std::size_t i = 0; i < img.maps.size(); ++i) {
    const auto& decl = img.maps[i].decl;
    const auto bytes = m.map_bytes(img, i);
    Json entries = Json::object();
    for (std::size_t e = 0; e < decl.n_entries; ++e) {
      const auto* p = bytes.data() + e * decl.value_size;
      if (std::all_of(p, p + decl.value_size, [](std::uint8_t b) { return b == 0; })) continue;
      if (decl.value_size == 8) {
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= std::uint64_t{p[b]} << (8 * b);
        entries[std::to_string(e)] = v;
      } else {
        std::string hex;
        for (std::size_t b = 0; b < decl.value_size; ++b) hex += fmt::format("{:02x}", p[b]);
        entries[std::to_string(e)] = hex;
      }
    }
    maps[decl.name] = entries;
  }
  return maps;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator for isolated execution of verified BPF programs"};
  app.require_subcommand(1);

  std::vector<std::string> bugs;
  const std::vector<std::string> bug_names = {"or32", "memnull", "mapmischeck"};

  auto* verify = app.add_subcommand("verify", "Verify a program and print deduced callsite ranges");
  std::string verify_file;
  verify->add_option("file", verify_file, "Assembly source")->required();
  verify->add_option("--bug", bugs, "Enable an injected verifier bug")->check(CLI::IsMember(bug_names));

  auto* disasm = app.add_subcommand("disasm", "Print the canonical listing of a program");
  std::string disasm_file;
  disasm->add_option("file", disasm_file, "Assembly source")->required();

  auto* run = app.add_subcommand("run", "Load and run a program over input events");
  std::string run_file, input_file;
  moat::runtime::MoatConfig cfg;
  bool no_pks = false, no_dpa = false, no_cop = false, no_addr = false;
  std::uint64_t irq_at = 0;
  run->add_option("file", run_file, "Assembly source")->required();
  run->add_option("--input", input_file, "Packets, one hex line each")->required();
  run->add_option("--bug", bugs, "Enable an injected verifier bug")->check(CLI::IsMember(bug_names));
  run->add_flag("--no-pks", no_pks, "Leave kernel and shared domains open to BPF code");
  run->add_flag("--no-dpa", no_dpa, "Skip helper argument guards");
  run->add_flag("--no-cop", no_cop, "Leave critical objects open to helpers");
  run->add_flag("--no-addr-space", no_addr, "Run all programs in one address space");
  run->add_option("--pcid-bits", cfg.pcid_bits, "PCID width")->check(CLI::Range(1, 12));
  run->add_option("--irq-at", irq_at, "Fire an interrupt after N instructions")->check(CLI::PositiveNumber);
  run->add_flag("--trace", cfg.trace, "Include the event trace in each verdict");

  auto* scen = app.add_subcommand("scenario", "Run built-in scenarios and check their expectations");
  std::string scen_name;
  bool scen_all = false, scen_trace = false;
  scen->add_option("name", scen_name, "Scenario name");
  scen->add_flag("--all", scen_all, "Run every scenario");
  scen->add_flag("--trace", scen_trace, "Include event traces");
  scen->add_flag("--list", [&](std::int64_t) {
    for (auto n : moat::scenario::scenario_names()) std::cout << n << "\n";
    std::exit(0);
  }, "List scenario names");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*verify) {
      auto prog = moat::isa::assemble(slurp(verify_file), std::filesystem::path(verify_file).stem().string());
      const auto out = moat::verifier::verify(prog, parse_bugs(bugs));
      std::cout << moat::report::verifier_json(out).dump() << "\n";
      return out.accepted ? 0 : kExitReject;
    }
    if (*disasm) {
      auto prog = moat::isa::assemble(slurp(disasm_file), std::filesystem::path(disasm_file).stem().string());
      std::cout << moat::isa::disassemble(prog) << "\n";
      return 0;
    }
    if (*run) {
      const auto name = std::filesystem::path(run_file).stem().string();
      auto prog = moat::isa::assemble(slurp(run_file), name);
      const auto packets = moat::scenario::parse_packets(slurp(input_file));
      cfg.pks = !no_pks;
      cfg.dpa = !no_dpa;
      cfg.cop = !no_cop;
      cfg.addr_space = !no_addr;
      if (irq_at) cfg.interrupt_at = irq_at;
      moat::runtime::Machine m(cfg);
      auto loaded = m.load(prog, parse_bugs(bugs));
      if (!loaded) {
        std::cout << moat::report::verdict_json(*loaded.rejected, name, cfg, m.counters()).dump() << "\n";
        return kExitReject;
      }
      int code = 0;
      std::map<std::string, int> tally;
      for (const auto& p : packets) {
        const auto v = m.run(*loaded.image, p);
        std::cout << moat::report::verdict_json(v, name, cfg, m.counters()).dump() << "\n";
        ++tally[std::string(moat::runtime::outcome_name(v.outcome))];
        if (code == 0) code = moat::runtime::exit_code(v.outcome);
      }
      Json summary = {{"events", packets.size()}, {"outcomes", tally}, {"maps", map_dump(m, *loaded.image)},
                      {"counters", moat::report::counters_json(m.counters())}};
      std::cout << Json{{"summary", summary}}.dump() << "\n";
      return code;
    }
    if (*scen) {
      std::vector<std::string_view> names;
      if (scen_all) names = moat::scenario::scenario_names();
      else if (!scen_name.empty()) names.push_back(scen_name);
      else throw CLI::RequiredError("name or --all");
      bool ok = true;
      for (auto n : names) {
        const auto r = moat::scenario::run_scenario(n, scen_trace);
        std::cout << moat::report::report_json(r).dump() << "\n";
        ok = ok && r.pass();
      }
      return ok ? 0 : 1;
    }
  } catch (const moat::isa::AsmError& e) {
    std::cerr << "moatsim: " << e.what() << "\n";
    return kExitParse;
  } catch (const moat::scenario::UnknownScenario& e) {
    std::cerr << "moatsim: " << e.what() << "\n";
    return kExitParse;
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "moatsim: " << e.what() << "\n";
    return kExitParse;
  }
  return 0;
}
