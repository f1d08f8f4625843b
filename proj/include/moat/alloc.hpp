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

// BPF memory allocators: whole pages, sub-page objects and unbacked virtual
// reservations, all carved out of one program's layout window.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "moat/mem.hpp"

namespace moat::alloc {

class AllocError : public std::runtime_error {
 public:
  enum class Kind { OutOfFrames, LayoutExhausted, BadSize, PoolFull, BadFree, OutOfRange, AlreadyBacked };
  AllocError(Kind k, const std::string& what) : std::runtime_error(what), kind_(k) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct VirtRange {
  std::uint64_t base = 0;
  std::size_t pages = 0;

  std::uint64_t end() const { return base + pages * mem::kPageSize; }
  bool contains(std::uint64_t va) const { return va >= base && va < end(); }
};

// A bump allocator over a fixed slice of virtual address space.
class LayoutWindow {
 public:
  LayoutWindow(std::uint64_t base, std::size_t pages) : base_(base), pages_(pages) {}

  VirtRange reserve(std::size_t n);
  // Leaves `n` pages unmapped.
  void skip(std::size_t n = 1) { reserve(n); }

  std::uint64_t base() const { return base_; }
  std::uint64_t end() const { return base_ + pages_ * mem::kPageSize; }
  std::size_t used() const { return cursor_; }

 private:
  std::uint64_t base_;
  std::size_t pages_;
  std::size_t cursor_ = 0;
};

class PagePool {
 public:
  PagePool(mem::Mmu& mmu, mem::AsId as, int owner, LayoutWindow& window)
      : mmu_(mmu), as_(as), owner_(owner), window_(window) {}
  PagePool(const PagePool&) = delete;
  PagePool& operator=(const PagePool&) = delete;

  // Maps `n` fresh zeroed frames contiguously.
  VirtRange alloc(std::size_t n, std::uint8_t key, bool writable, bool executable = false);
  // Maps externally owned frames, e.g. from a kernel-side pool.
  VirtRange adopt(const std::vector<mem::Pfn>& frames, std::uint8_t key, bool writable);

  // Unmaps every page and returns owned frames to physical memory.
  void release();

  int owner() const { return owner_; }
  mem::AsId space() const { return as_; }
  const std::vector<mem::Pfn>& frames() const { return frames_; }
  LayoutWindow& window() { return window_; }
  mem::Mmu& mmu() { return mmu_; }

 private:
  mem::Mmu& mmu_;
  mem::AsId as_;
  int owner_;
  LayoutWindow& window_;
  std::vector<mem::Pfn> frames_;
  std::vector<std::uint64_t> mapped_;
};

// First-fit sub-page allocator; objects never straddle pages.
class ObjectPool {
 public:
  static constexpr std::size_t kQuantum = 8;

  ObjectPool(PagePool& pages, std::uint8_t key, std::size_t max_pages = 64)
      : pages_(pages), key_(key), max_pages_(max_pages) {}

  std::uint64_t alloc(std::size_t size);
  void free(std::uint64_t addr);

  std::size_t num_pages() const { return pages_in_use_.size(); }
  // Live objects as (address, rounded size).
  const std::map<std::uint64_t, std::size_t>& live() const { return live_; }

 private:
  struct PageFree {
    std::uint64_t base;
    std::map<std::size_t, std::size_t> holes;  // offset -> length
  };

  PagePool& pages_;
  std::uint8_t key_;
  std::size_t max_pages_;
  std::vector<PageFree> pages_in_use_;
  std::map<std::uint64_t, std::size_t> live_;
};

// Virtual pages without backing until a frame is aliased into them.
class VirtReservation {
 public:
  VirtReservation(mem::Mmu& mmu, mem::AsId as, VirtRange range)
      : mmu_(&mmu), as_(as), range_(range), backing_(range.pages) {}

  void map(std::size_t index, mem::Pfn pfn, std::uint8_t key, bool writable);
  void unmap(std::size_t index);

  bool backed(std::size_t index) const { return index < backing_.size() && backing_[index].has_value(); }
  std::optional<mem::Pfn> backing(std::size_t index) const { return backing_.at(index); }
  const VirtRange& range() const { return range_; }
  std::uint64_t page(std::size_t index) const { return range_.base + index * mem::kPageSize; }

 private:
  mem::Mmu* mmu_;
  mem::AsId as_;
  VirtRange range_;
  std::vector<std::optional<mem::Pfn>> backing_;
};

VirtReservation virt_reserve(mem::Mmu& mmu, mem::AsId as, LayoutWindow& window, std::size_t n_pages);

}  // namespace moat::alloc
