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

#include "moat/mem.hpp"

#include <algorithm>
#include <cstring>

#include <fmt/format.h>

namespace moat::mem {

char access_char(Access a) {
  switch (a) {
    case Access::Read: return 'R';
    case Access::Write: return 'W';
    case Access::Exec: return 'X';
  }
  return '?';
}

std::string_view fault_kind_name(FaultKind k) {
  switch (k) {
    case FaultKind::PageFault: return "PageFault";
    case FaultKind::WriteProtFault: return "WriteProtFault";
    case FaultKind::PkAccessDisabled: return "PkAccessDisabled";
    case FaultKind::PkWriteDisabled: return "PkWriteDisabled";
    case FaultKind::ExecFault: return "ExecFault";
  }
  return "?";
}

std::string Fault::to_string() const {
  return fmt::format("FAULT kind={} pcid={} vaddr={:#x} access={}", fault_kind_name(kind), pcid, vaddr,
                     access_char(access));
}

std::optional<FaultKind> PkrsState::check(int key, Access a) const {
  if (a == Access::Exec) return std::nullopt;
  const auto bits = static_cast<unsigned>(get(key));
  if (bits & 1u) return FaultKind::PkAccessDisabled;
  if ((bits & 2u) && a == Access::Write) return FaultKind::PkWriteDisabled;
  return std::nullopt;
}

std::string PkrsState::to_string() const {
  static constexpr std::string_view kNames[] = {"AE", "AD", "WD", "AD|WD"};
  std::string s = fmt::format("{:#010x}", raw_);
  for (int k = 0; k < 4; ++k) s += fmt::format(" k{}={}", k, kNames[static_cast<int>(get(k))]);
  return s;
}

// ---------------------------------------------------------------------------

std::optional<TlbEntry> Tlb::lookup(std::uint32_t pcid, std::uint64_t vpn) {
  auto it = index_.find(tag(pcid, vpn));
  if (it == index_.end()) return std::nullopt;
  if (it->second->pcid != pcid) ++cross_pcid_hits_;
  ++hits_;
  return *it->second;
}

void Tlb::fill(const TlbEntry& e) {
  if (capacity_ == 0) return;
  evict(e.pcid, e.vpn);
  if (fifo_.size() == capacity_) {
    index_.erase(tag(fifo_.front().pcid, fifo_.front().vpn));
    fifo_.pop_front();
  }
  fifo_.push_back(e);
  index_[tag(e.pcid, e.vpn)] = std::prev(fifo_.end());
  ++fills_;
}

std::size_t Tlb::flush_pcid(std::uint32_t pcid) {
  std::size_t n = 0;
  for (auto it = fifo_.begin(); it != fifo_.end();) {
    if (it->pcid == pcid) {
      index_.erase(tag(it->pcid, it->vpn));
      it = fifo_.erase(it);
      ++n;
    } else {
      ++it;
    }
  }
  return n;
}

void Tlb::evict(std::uint32_t pcid, std::uint64_t vpn) {
  auto it = index_.find(tag(pcid, vpn));
  if (it == index_.end()) return;
  fifo_.erase(it->second);
  index_.erase(it);
}

void Tlb::clear() {
  fifo_.clear();
  index_.clear();
}

std::size_t Tlb::count(std::uint32_t pcid) const {
  return static_cast<std::size_t>(
      std::count_if(fifo_.begin(), fifo_.end(), [&](const TlbEntry& e) { return e.pcid == pcid; }));
}

// ---------------------------------------------------------------------------

PhysicalMemory::PhysicalMemory(std::size_t max_frames) : max_frames_(max_frames) {
  frames_.resize(1);  // frame 0: reserved, never backed
}

Pfn PhysicalMemory::alloc() {
  Pfn pfn;
  if (!free_.empty()) {
    pfn = free_.back();
    free_.pop_back();
  } else {
    if (frames_.size() >= max_frames_)
      throw MemError(MemError::Kind::OutOfFrames, fmt::format("out of frames ({} max)", max_frames_));
    pfn = frames_.size();
    frames_.emplace_back();
  }
  frames_[pfn] = std::make_unique<Frame>();
  frames_[pfn]->fill(0);
  ++in_use_;
  return pfn;
}

void PhysicalMemory::free(Pfn pfn) {
  if (!allocated(pfn)) throw MemError(MemError::Kind::NotMapped, fmt::format("frame {} not allocated", pfn));
  frames_[pfn].reset();
  free_.push_back(pfn);
  --in_use_;
}

PhysicalMemory::Frame& PhysicalMemory::frame(Pfn pfn) {
  if (!allocated(pfn)) throw MemError(MemError::Kind::NotMapped, fmt::format("frame {} not allocated", pfn));
  return *frames_[pfn];
}

const PhysicalMemory::Frame& PhysicalMemory::frame(Pfn pfn) const {
  if (!allocated(pfn)) throw MemError(MemError::Kind::NotMapped, fmt::format("frame {} not allocated", pfn));
  return *frames_[pfn];
}

// ---------------------------------------------------------------------------

Mmu::Mmu(MmuConfig cfg) : cfg_(cfg), phys_(cfg.max_frames), tlb_(cfg.tlb_capacity) {
  if (cfg_.pcid_bits == 0 || cfg_.pcid_bits > 12)
    throw MemError(MemError::Kind::BadPcid, fmt::format("pcid_bits {} not in [1, 12]", cfg_.pcid_bits));
}

AsId Mmu::create_space(std::uint32_t pcid) {
  if (pcid >> cfg_.pcid_bits)
    throw MemError(MemError::Kind::BadPcid, fmt::format("pcid {} exceeds {} bits", pcid, cfg_.pcid_bits));
  AddressSpace as;
  as.id = static_cast<AsId>(spaces_.size());
  as.pcid = pcid;
  spaces_.push_back(std::move(as));
  return spaces_.back().id;
}

AddressSpace& Mmu::space(AsId id) {
  if (id >= spaces_.size())
    throw MemError(MemError::Kind::UnknownAddressSpace, fmt::format("no address space {}", id));
  return spaces_[id];
}

const AddressSpace& Mmu::space(AsId id) const {
  if (id >= spaces_.size())
    throw MemError(MemError::Kind::UnknownAddressSpace, fmt::format("no address space {}", id));
  return spaces_[id];
}

void Mmu::map_page(AsId as, std::uint64_t vaddr, Pfn pfn, bool writable, bool executable, std::uint8_t key) {
  auto& s = space(as);
  if (page_offset(vaddr) != 0)
    throw MemError(MemError::Kind::Misaligned, fmt::format("vaddr {:#x} not page aligned", vaddr));
  if (writable && executable)
    throw MemError(MemError::Kind::WxViolation, fmt::format("page {:#x} both writable and executable", vaddr));
  if (key >= kNumKeys) throw MemError(MemError::Kind::Misaligned, fmt::format("key {} out of range", key));
  if (!phys_.allocated(pfn)) throw MemError(MemError::Kind::NotMapped, fmt::format("frame {} not allocated", pfn));
  const auto vpn = vaddr >> kPageShift;
  if (s.table.count(vpn))
    throw MemError(MemError::Kind::AlreadyMapped, fmt::format("page {:#x} already mapped", vaddr));
  s.table.emplace(vpn, Pte{pfn, true, writable, executable, key});
}

void Mmu::unmap_page(AsId as, std::uint64_t vaddr) {
  auto& s = space(as);
  const auto vpn = vaddr >> kPageShift;
  auto it = s.table.find(vpn);
  if (it == s.table.end())
    throw MemError(MemError::Kind::NotMapped, fmt::format("page {:#x} not mapped", vaddr));
  s.table.erase(it);
  tlb_.evict(s.pcid, vpn);
  if (as == active_) tlb_.evict(pcid_, vpn);
}

std::optional<Pte> Mmu::lookup_pte(AsId as, std::uint64_t vaddr) const {
  const auto& s = space(as);
  auto it = s.table.find(vaddr >> kPageShift);
  if (it == s.table.end()) return std::nullopt;
  return it->second;
}

void Mmu::write_cr3(AsId root, std::uint32_t pcid, bool noflush) {
  space(root);
  if (pcid >> cfg_.pcid_bits)
    throw MemError(MemError::Kind::BadPcid, fmt::format("pcid {} exceeds {} bits", pcid, cfg_.pcid_bits));
  active_ = root;
  pcid_ = pcid;
  if (!noflush) tlb_.flush_pcid(pcid);
}

std::optional<Fault> Mmu::raise(FaultKind k, std::uint64_t vaddr, Access a, int key, std::size_t len) {
  Fault f{k, vaddr, pcid_, a, key};
  faults_.push_back(f);
  ++fault_counts_[static_cast<std::size_t>(k)];
  if (cfg_.trace_faults) trace_.push_back(f.to_string());
  if (observer_) observer_({vaddr, len, a, key, pcid_, false});
  return f;
}

std::optional<Fault> Mmu::access(std::uint64_t vaddr, std::size_t len, Access kind, std::uint8_t* buf) {
  if (len == 0 || page_offset(vaddr) + len > kPageSize)
    throw std::invalid_argument(fmt::format("access of {} bytes at {:#x} crosses a page", len, vaddr));
  return transfer(vaddr, len, kind, buf);
}

std::optional<Fault> Mmu::transfer(std::uint64_t vaddr, std::size_t len, Access kind, std::uint8_t* buf) {
  const auto vpn = vaddr >> kPageShift;
  auto e = tlb_.lookup(pcid_, vpn);
  if (!e) {
    const auto& s = spaces_.at(active_);
    auto it = s.table.find(vpn);
    if (it == s.table.end() || !it->second.present) return raise(FaultKind::PageFault, vaddr, kind, -1, len);
    const auto& p = it->second;
    e = TlbEntry{pcid_, vpn, p.pfn, p.writable, p.executable, p.key};
    tlb_.fill(*e);
  }
  if (kind == Access::Write && !e->writable) return raise(FaultKind::WriteProtFault, vaddr, kind, e->key, len);
  if (kind == Access::Exec && !e->executable) return raise(FaultKind::ExecFault, vaddr, kind, e->key, len);
  if (auto pk = pkrs_.check(e->key, kind)) return raise(*pk, vaddr, kind, e->key, len);

  auto& frame = phys_.frame(e->pfn);
  const auto off = page_offset(vaddr);
  if (kind == Access::Write) {
    std::memcpy(frame.data() + off, buf, len);
  } else {
    std::memcpy(buf, frame.data() + off, len);
  }
  if (observer_) observer_({vaddr, len, kind, e->key, pcid_, true});
  return std::nullopt;
}

namespace {

template <typename Fn>
std::optional<Fault> split(std::uint64_t vaddr, std::size_t len, Fn&& fn) {
  std::size_t done = 0;
  while (done < len) {
    const auto va = vaddr + done;
    const auto chunk = std::min<std::size_t>(len - done, kPageSize - page_offset(va));
    if (auto f = fn(va, done, chunk)) return f;
    done += chunk;
  }
  return std::nullopt;
}

}  // namespace

std::optional<Fault> Mmu::read(std::uint64_t vaddr, std::span<std::uint8_t> out) {
  return split(vaddr, out.size(), [&](std::uint64_t va, std::size_t at, std::size_t n) {
    return transfer(va, n, Access::Read, out.data() + at);
  });
}

std::optional<Fault> Mmu::write(std::uint64_t vaddr, std::span<const std::uint8_t> in) {
  return split(vaddr, in.size(), [&](std::uint64_t va, std::size_t at, std::size_t n) {
    return transfer(va, n, Access::Write, const_cast<std::uint8_t*>(in.data() + at));
  });
}

std::optional<Fault> Mmu::fetch(std::uint64_t vaddr, std::span<std::uint8_t> out) {
  return split(vaddr, out.size(), [&](std::uint64_t va, std::size_t at, std::size_t n) {
    return transfer(va, n, Access::Exec, out.data() + at);
  });
}

std::optional<Fault> Mmu::read_u64(std::uint64_t vaddr, std::uint64_t& out, std::size_t width) {
  std::array<std::uint8_t, 8> b{};
  auto f = read(vaddr, std::span(b.data(), width));
  if (f) return f;
  out = 0;
  for (std::size_t i = 0; i < width; ++i) out |= std::uint64_t{b[i]} << (8 * i);
  return std::nullopt;
}

std::optional<Fault> Mmu::write_u64(std::uint64_t vaddr, std::uint64_t v, std::size_t width) {
  std::array<std::uint8_t, 8> b{};
  for (std::size_t i = 0; i < width; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  return write(vaddr, std::span<const std::uint8_t>(b.data(), width));
}

}  // namespace moat::mem
