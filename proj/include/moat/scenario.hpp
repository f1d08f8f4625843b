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

// Built-in programs and self-checking scenarios. Each scenario runs a matrix
// of protection toggles and compares every cell with its expected outcome.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "moat/isa.hpp"
#include "moat/runtime.hpp"
#include "moat/verifier.hpp"

namespace moat::scenario {

class UnknownScenario : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Names of the bundled assembly programs.
std::vector<std::string_view> program_names();
std::string_view program_source(std::string_view name);
isa::Program program(std::string_view name);

using Packet = std::vector<std::uint8_t>;

// A packet whose first eight bytes hold `v` little-endian, padded to `size`.
Packet packet_u64(std::uint64_t v, std::size_t size = 16, std::uint8_t fill = 0x41);
// Deterministic IPv4-looking packets for the byte counter.
std::vector<Packet> benign_packets(std::size_t n, std::uint64_t seed = 1);
// One packet per line as hex bytes; blank lines and '#' comments are
// skipped. Throws std::invalid_argument on malformed input.
std::vector<Packet> parse_packets(std::string_view text);
// Offset that makes "r10 - 16 + off" land on the kernel sentinel.
std::uint64_t sentinel_offset(const runtime::ProgramImage& img);

struct Cell {
  std::string label;
  runtime::MoatConfig cfg;
  verifier::BugFlags flags;
  runtime::Outcome expected = runtime::Outcome::Completed;
  runtime::Verdict verdict;
  runtime::Counters counters;
  std::vector<std::string> failed_checks;  // beyond the outcome itself

  bool pass() const { return verdict.outcome == expected && failed_checks.empty(); }
};

struct Report {
  std::string name;
  std::vector<Cell> cells;

  bool pass() const;
};

std::vector<std::string_view> scenario_names();
Report run_scenario(std::string_view name, bool trace = false);

}  // namespace moat::scenario
