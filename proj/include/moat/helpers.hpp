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

// Helper bodies and map implementations. Bodies never see physical frames:
// every byte goes through a MemoryPort, which the runtime backs with the MMU
// under helper-mode PKRS.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "moat/isa.hpp"
#include "moat/mem.hpp"
#include "moat/signature.hpp"

namespace moat::helpers {

class MemoryPort {
 public:
  virtual ~MemoryPort() = default;
  virtual std::optional<mem::Fault> read(std::uint64_t va, std::span<std::uint8_t> out) = 0;
  virtual std::optional<mem::Fault> write(std::uint64_t va, std::span<const std::uint8_t> in) = 0;

  std::optional<mem::Fault> read_u64(std::uint64_t va, std::uint64_t& out);
  std::optional<mem::Fault> write_u64(std::uint64_t va, std::uint64_t v);
};

class MmuPort final : public MemoryPort {
 public:
  explicit MmuPort(mem::Mmu& mmu) : mmu_(mmu) {}
  std::optional<mem::Fault> read(std::uint64_t va, std::span<std::uint8_t> out) override { return mmu_.read(va, out); }
  std::optional<mem::Fault> write(std::uint64_t va, std::span<const std::uint8_t> in) override {
    return mmu_.write(va, in);
  }

 private:
  mem::Mmu& mmu_;
};

// Negative errno values returned in r0.
inline constexpr std::int64_t kErrRange = -34;
inline constexpr std::int64_t kErrInval = -22;

// Metadata record stored on each map's critical page.
inline constexpr std::uint64_t kOpsSentinel = 0x0b5e55ed0b5e55edULL;
inline constexpr std::uint64_t kRingbufHeaderBytes = 16;  // producer, consumer
inline constexpr std::uint64_t kRingbufRecordHeader = 8;

struct MapBinding {
  isa::MapDecl decl;
  std::uint64_t data_base = 0;
  std::uint64_t data_bytes = 0;  // page-rounded
  std::uint64_t meta_base = 0;
};

class ArrayMap {
 public:
  explicit ArrayMap(const MapBinding& b) : b_(b) {}

  // Address of element `index`, or 0.
  std::uint64_t lookup(std::uint64_t index) const;
  std::int64_t update(MemoryPort& mem, std::uint64_t index, std::uint64_t src, std::optional<mem::Fault>& fault) const;
  std::int64_t remove(MemoryPort& mem, std::uint64_t index, std::optional<mem::Fault>& fault) const;

 private:
  const MapBinding& b_;
};

class RingbufMap {
 public:
  explicit RingbufMap(const MapBinding& b) : b_(b) {}

  std::uint64_t capacity() const { return b_.data_bytes - kRingbufHeaderBytes; }
  // Record address, or 0 when `size` cannot be satisfied.
  std::uint64_t reserve(MemoryPort& mem, std::uint64_t size, std::optional<mem::Fault>& fault) const;
  std::int64_t submit(MemoryPort& mem, std::uint64_t rec, std::optional<mem::Fault>& fault) const;

 private:
  const MapBinding& b_;
};

struct HelperEnv {
  MemoryPort& mem;
  std::span<const MapBinding> maps;
  std::uint64_t bounce_addr = 0;  // kernel buffer used by skb_load
  std::uint64_t leak_addr = 0;    // what the defective reserve hands back
  bool defect_armed = false;
};

struct HelperResult {
  std::uint64_t r0 = 0;
  std::optional<mem::Fault> fault;
};

HelperResult invoke(isa::HelperId id, HelperEnv& env, const std::array<std::uint64_t, 5>& args);

}  // namespace moat::helpers
