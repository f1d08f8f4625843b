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

// Emulated paging with protection keys. One Mmu models one CPU's view: the
// active CR3 (address space + pcid), the PKRS register and a pcid-tagged TLB.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <list>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace moat::mem {

inline constexpr std::uint64_t kPageSize = 4096;
inline constexpr unsigned kPageShift = 12;
inline constexpr int kNumKeys = 16;

using Pfn = std::uint64_t;
using AsId = std::uint32_t;

constexpr std::uint64_t page_base(std::uint64_t va) { return va & ~(kPageSize - 1); }
constexpr std::uint64_t page_offset(std::uint64_t va) { return va & (kPageSize - 1); }

enum class Access { Read, Write, Exec };
char access_char(Access a);

enum class FaultKind { PageFault, WriteProtFault, PkAccessDisabled, PkWriteDisabled, ExecFault };
std::string_view fault_kind_name(FaultKind k);
inline constexpr FaultKind kAllFaultKinds[] = {FaultKind::PageFault, FaultKind::WriteProtFault,
                                               FaultKind::PkAccessDisabled, FaultKind::PkWriteDisabled,
                                               FaultKind::ExecFault};

struct Fault {
  FaultKind kind;
  std::uint64_t vaddr = 0;
  std::uint32_t pcid = 0;
  Access access = Access::Read;
  int key = -1;  // key of the translated page; -1 when there was no mapping

  bool is_pk() const { return kind == FaultKind::PkAccessDisabled || kind == FaultKind::PkWriteDisabled; }
  // "FAULT kind=<k> pcid=<p> vaddr=0x<hex> access=<R|W|X>"
  std::string to_string() const;
  friend bool operator==(const Fault&, const Fault&) = default;
};

class MemError : public std::runtime_error {
 public:
  enum class Kind { AlreadyMapped, NotMapped, WxViolation, UnknownAddressSpace, OutOfFrames, Misaligned, BadPcid };
  MemError(Kind k, const std::string& what) : std::runtime_error(what), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Pte {
  Pfn pfn = 0;
  bool present = true;
  bool writable = false;
  bool executable = false;
  std::uint8_t key = 0;
};

// Two bits per key: bit 0 access-disable, bit 1 write-disable.
enum class KeyPerm : std::uint8_t { AE = 0, AD = 1, WD = 2, ADWD = 3 };

class PkrsState {
 public:
  constexpr PkrsState() = default;
  constexpr explicit PkrsState(std::uint32_t raw) : raw_(raw) {}

  static constexpr PkrsState all(KeyPerm p) {
    std::uint32_t raw = 0;
    for (int k = 0; k < kNumKeys; ++k) raw |= static_cast<std::uint32_t>(p) << (2 * k);
    return PkrsState(raw);
  }

  constexpr std::uint32_t raw() const { return raw_; }
  constexpr KeyPerm get(int key) const { return static_cast<KeyPerm>((raw_ >> (2 * key)) & 3u); }
  constexpr PkrsState& set(int key, KeyPerm p) {
    raw_ = (raw_ & ~(3u << (2 * key))) | (static_cast<std::uint32_t>(p) << (2 * key));
    return *this;
  }
  constexpr PkrsState with(int key, KeyPerm p) const { return PkrsState(*this).set(key, p); }

  // Data-access verdict for one key; Exec is never gated by keys.
  std::optional<FaultKind> check(int key, Access a) const;

  std::string to_string() const;
  friend constexpr bool operator==(const PkrsState&, const PkrsState&) = default;

 private:
  std::uint32_t raw_ = 0;
};

struct TlbEntry {
  std::uint32_t pcid = 0;
  std::uint64_t vpn = 0;
  Pfn pfn = 0;
  bool writable = false;
  bool executable = false;
  std::uint8_t key = 0;
};

// FIFO translation cache tagged by pcid.
class Tlb {
 public:
  explicit Tlb(std::size_t capacity = 256) : capacity_(capacity) {}

  std::optional<TlbEntry> lookup(std::uint32_t pcid, std::uint64_t vpn);
  void fill(const TlbEntry& e);
  std::size_t flush_pcid(std::uint32_t pcid);
  void evict(std::uint32_t pcid, std::uint64_t vpn);
  void clear();

  std::size_t size() const { return fifo_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t count(std::uint32_t pcid) const;
  std::vector<TlbEntry> entries() const { return {fifo_.begin(), fifo_.end()}; }

  std::uint64_t hits() const { return hits_; }
  std::uint64_t fills() const { return fills_; }
  // Incremented if a lookup ever returns an entry tagged with another pcid.
  std::uint64_t cross_pcid_hits() const { return cross_pcid_hits_; }

 private:
  static std::uint64_t tag(std::uint32_t pcid, std::uint64_t vpn) { return (std::uint64_t{pcid} << 52) | vpn; }

  std::size_t capacity_;
  std::list<TlbEntry> fifo_;
  std::unordered_map<std::uint64_t, std::list<TlbEntry>::iterator> index_;
  std::uint64_t hits_ = 0;
  std::uint64_t fills_ = 0;
  std::uint64_t cross_pcid_hits_ = 0;
};

class PhysicalMemory {
 public:
  using Frame = std::array<std::uint8_t, kPageSize>;

  explicit PhysicalMemory(std::size_t max_frames = 1 << 16);

  // Zero-filled; frame 0 is never handed out.
  Pfn alloc();
  void free(Pfn pfn);
  bool allocated(Pfn pfn) const { return pfn < frames_.size() && frames_[pfn] != nullptr; }
  std::size_t in_use() const { return in_use_; }

  // Raw frame access for the simulator's own bookkeeping and test oracles.
  Frame& frame(Pfn pfn);
  const Frame& frame(Pfn pfn) const;

 private:
  std::size_t max_frames_;
  std::vector<std::unique_ptr<Frame>> frames_;
  std::vector<Pfn> free_;
  std::size_t in_use_ = 0;
};

struct AddressSpace {
  AsId id = 0;
  std::uint32_t pcid = 0;
  std::unordered_map<std::uint64_t, Pte> table;  // vpn -> pte
};

// One record per access attempt, for audit logs.
struct AccessRecord {
  std::uint64_t vaddr;
  std::size_t len;
  Access access;
  int key;
  std::uint32_t pcid;
  bool ok;
};

struct MmuConfig {
  std::size_t tlb_capacity = 256;
  unsigned pcid_bits = 12;
  std::size_t max_frames = 1 << 16;
  bool trace_faults = false;
};

class Mmu {
 public:
  explicit Mmu(MmuConfig cfg = {});

  PhysicalMemory& phys() { return phys_; }
  const PhysicalMemory& phys() const { return phys_; }
  Tlb& tlb() { return tlb_; }
  const Tlb& tlb() const { return tlb_; }
  unsigned pcid_bits() const { return cfg_.pcid_bits; }

  AsId create_space(std::uint32_t pcid);
  AddressSpace& space(AsId id);
  const AddressSpace& space(AsId id) const;
  std::size_t num_spaces() const { return spaces_.size(); }

  void map_page(AsId as, std::uint64_t vaddr, Pfn pfn, bool writable, bool executable, std::uint8_t key);
  void unmap_page(AsId as, std::uint64_t vaddr);
  std::optional<Pte> lookup_pte(AsId as, std::uint64_t vaddr) const;

  void write_cr3(AsId root, std::uint32_t pcid, bool noflush);
  AsId active_space() const { return active_; }
  std::uint32_t active_pcid() const { return pcid_; }

  PkrsState set_pkrs(PkrsState v) { return std::exchange(pkrs_, v); }
  PkrsState pkrs() const { return pkrs_; }

  // Single-page primitive. `buf` is read into (Read/Exec) or written from
  // (Write); it must hold `len` bytes.
  std::optional<Fault> access(std::uint64_t vaddr, std::size_t len, Access kind, std::uint8_t* buf);

  // Splitting wrappers. On a fault the bytes before the faulting page have
  // already been transferred.
  std::optional<Fault> read(std::uint64_t vaddr, std::span<std::uint8_t> out);
  std::optional<Fault> write(std::uint64_t vaddr, std::span<const std::uint8_t> in);
  std::optional<Fault> fetch(std::uint64_t vaddr, std::span<std::uint8_t> out);

  std::optional<Fault> read_u64(std::uint64_t vaddr, std::uint64_t& out, std::size_t width = 8);
  std::optional<Fault> write_u64(std::uint64_t vaddr, std::uint64_t v, std::size_t width = 8);

  void set_observer(std::function<void(const AccessRecord&)> fn) { observer_ = std::move(fn); }

  const std::vector<Fault>& faults() const { return faults_; }
  std::uint64_t fault_count(FaultKind k) const { return fault_counts_[static_cast<std::size_t>(k)]; }
  const std::vector<std::string>& fault_trace() const { return trace_; }

 private:
  std::optional<Fault> transfer(std::uint64_t vaddr, std::size_t len, Access kind, std::uint8_t* buf);
  std::optional<Fault> raise(FaultKind k, std::uint64_t vaddr, Access a, int key, std::size_t len);

  MmuConfig cfg_;
  PhysicalMemory phys_;
  Tlb tlb_;
  std::vector<AddressSpace> spaces_;
  AsId active_ = 0;
  std::uint32_t pcid_ = 0;
  PkrsState pkrs_;
  std::function<void(const AccessRecord&)> observer_;
  std::vector<Fault> faults_;
  std::array<std::uint64_t, std::size(kAllFaultKinds)> fault_counts_{};
  std::vector<std::string> trace_;
};

}  // namespace moat::mem
