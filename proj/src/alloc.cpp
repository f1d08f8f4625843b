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

#include "moat/alloc.hpp"

#include <fmt/format.h>

namespace moat::alloc {

using mem::kPageSize;

VirtRange LayoutWindow::reserve(std::size_t n) {
  if (n > pages_ - cursor_)
    throw AllocError(AllocError::Kind::LayoutExhausted,
                     fmt::format("window at {:#x} has {} free pages, {} requested", base_, pages_ - cursor_, n));
  VirtRange r{base_ + cursor_ * kPageSize, n};
  cursor_ += n;
  return r;
}

VirtRange PagePool::alloc(std::size_t n, std::uint8_t key, bool writable, bool executable) {
  if (n == 0) throw AllocError(AllocError::Kind::BadSize, "page_alloc of zero pages");
  const auto range = window_.reserve(n);
  std::vector<mem::Pfn> got;
  try {
    for (std::size_t i = 0; i < n; ++i) got.push_back(mmu_.phys().alloc());
  } catch (const mem::MemError& e) {
    for (auto p : got) mmu_.phys().free(p);
    throw AllocError(AllocError::Kind::OutOfFrames, e.what());
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto va = range.base + i * kPageSize;
    mmu_.map_page(as_, va, got[i], writable, executable, key);
    frames_.push_back(got[i]);
    mapped_.push_back(va);
  }
  return range;
}

VirtRange PagePool::adopt(const std::vector<mem::Pfn>& frames, std::uint8_t key, bool writable) {
  if (frames.empty()) throw AllocError(AllocError::Kind::BadSize, "adopt of zero frames");
  const auto range = window_.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto va = range.base + i * kPageSize;
    mmu_.map_page(as_, va, frames[i], writable, false, key);
    mapped_.push_back(va);
  }
  return range;
}

void PagePool::release() {
  for (auto va : mapped_) mmu_.unmap_page(as_, va);
  mapped_.clear();
  for (auto p : frames_) mmu_.phys().free(p);
  frames_.clear();
}

std::uint64_t ObjectPool::alloc(std::size_t size) {
  if (size == 0 || size > kPageSize)
    throw AllocError(AllocError::Kind::BadSize, fmt::format("object size {} not in (0, {}]", size, kPageSize));
  const auto need = (size + kQuantum - 1) / kQuantum * kQuantum;
  auto take = [&](PageFree& pg) -> std::optional<std::uint64_t> {
    for (auto it = pg.holes.begin(); it != pg.holes.end(); ++it) {
      auto [off, len] = *it;
      if (len < need) continue;
      pg.holes.erase(it);
      if (len > need) pg.holes.emplace(off + need, len - need);
      const auto addr = pg.base + off;
      live_.emplace(addr, need);
      return addr;
    }
    return std::nullopt;
  };
  for (auto& pg : pages_in_use_)
    if (auto a = take(pg)) return *a;
  if (pages_in_use_.size() >= max_pages_)
    throw AllocError(AllocError::Kind::PoolFull, fmt::format("object pool full at {} pages", max_pages_));
  const auto range = pages_.alloc(1, key_, true);
  pages_in_use_.push_back({range.base, {{0, kPageSize}}});
  return *take(pages_in_use_.back());
}

void ObjectPool::free(std::uint64_t addr) {
  auto it = live_.find(addr);
  if (it == live_.end()) throw AllocError(AllocError::Kind::BadFree, fmt::format("no live object at {:#x}", addr));
  const auto len = it->second;
  live_.erase(it);
  for (auto& pg : pages_in_use_) {
    if (addr < pg.base || addr >= pg.base + kPageSize) continue;
    auto off = static_cast<std::size_t>(addr - pg.base);
    auto size = len;
    // Coalesce with neighbours.
    auto next = pg.holes.lower_bound(off);
    if (next != pg.holes.end() && next->first == off + size) {
      size += next->second;
      next = pg.holes.erase(next);
    }
    if (next != pg.holes.begin()) {
      auto prev = std::prev(next);
      if (prev->first + prev->second == off) {
        off = prev->first;
        size += prev->second;
        pg.holes.erase(prev);
      }
    }
    pg.holes.emplace(off, size);
    return;
  }
}

void VirtReservation::map(std::size_t index, mem::Pfn pfn, std::uint8_t key, bool writable) {
  if (index >= backing_.size())
    throw AllocError(AllocError::Kind::OutOfRange, fmt::format("page {} outside reservation of {}", index, backing_.size()));
  if (backing_[index])
    throw AllocError(AllocError::Kind::AlreadyBacked, fmt::format("reservation page {} already backed", index));
  mmu_->map_page(as_, page(index), pfn, writable, false, key);
  backing_[index] = pfn;
}

void VirtReservation::unmap(std::size_t index) {
  if (index >= backing_.size())
    throw AllocError(AllocError::Kind::OutOfRange, fmt::format("page {} outside reservation of {}", index, backing_.size()));
  if (!backing_[index]) return;
  mmu_->unmap_page(as_, page(index));
  backing_[index].reset();
}

VirtReservation virt_reserve(mem::Mmu& mmu, mem::AsId as, LayoutWindow& window, std::size_t n_pages) {
  if (n_pages == 0) throw AllocError(AllocError::Kind::BadSize, "virt_reserve of zero pages");
  return VirtReservation(mmu, as, window.reserve(n_pages));
}

}  // namespace moat::alloc
