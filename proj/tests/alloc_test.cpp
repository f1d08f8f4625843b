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

#include <random>
#include <set>

#include <gtest/gtest.h>

#include "moat/alloc.hpp"

using namespace moat;
using alloc::AllocError;
using mem::Access;
using mem::kPageSize;

namespace {

constexpr std::uint64_t kWindowA = 0x1'0000'0000ULL;
constexpr std::uint64_t kWindowB = 0x1'0100'0000ULL;

class AllocTest : public ::testing::Test {
 protected:
  AllocTest() {
    as_ = mmu_.create_space(1);
    mmu_.write_cr3(as_, 1, false);
    // BPF-domain view: only key 1 enabled.
    mmu_.set_pkrs(mem::PkrsState::all(mem::KeyPerm::AD).with(1, mem::KeyPerm::AE));
  }

  mem::Mmu mmu_;
  mem::AsId as_ = 0;
  alloc::LayoutWindow win_{kWindowA, 64};
};

}  // namespace

TEST_F(AllocTest, PageUsableUnderBpfKey) {
  alloc::PagePool pool(mmu_, as_, 0, win_);
  const auto r = pool.alloc(1, 1, true);
  EXPECT_EQ(r.pages, 1u);
  std::uint64_t v = 0;
  ASSERT_FALSE(mmu_.read_u64(r.base, v));
  EXPECT_EQ(v, 0u);
  EXPECT_FALSE(mmu_.write_u64(r.base + 8, 42));
  EXPECT_EQ(mmu_.lookup_pte(as_, r.base)->key, 1);
}

TEST_F(AllocTest, ZeroPagesRejected) {
  alloc::PagePool pool(mmu_, as_, 0, win_);
  try {
    pool.alloc(0, 1, true);
    FAIL();
  } catch (const AllocError& e) {
    EXPECT_EQ(e.kind(), AllocError::Kind::BadSize);
  }
}

TEST_F(AllocTest, LayoutExhausted) {
  alloc::LayoutWindow tiny(kWindowA, 2);
  alloc::PagePool pool(mmu_, as_, 0, tiny);
  pool.alloc(2, 1, true);
  try {
    pool.alloc(1, 1, true);
    FAIL();
  } catch (const AllocError& e) {
    EXPECT_EQ(e.kind(), AllocError::Kind::LayoutExhausted);
  }
}

TEST(PagePool, OutOfFrames) {
  mem::Mmu mmu(mem::MmuConfig{.max_frames = 4});
  const auto as = mmu.create_space(1);
  alloc::LayoutWindow win(kWindowA, 16);
  alloc::PagePool pool(mmu, as, 0, win);
  try {
    pool.alloc(8, 1, true);
    FAIL();
  } catch (const AllocError& e) {
    EXPECT_EQ(e.kind(), AllocError::Kind::OutOfFrames);
  }
}

TEST_F(AllocTest, PoolsNeverShareFrames) {
  alloc::LayoutWindow win_b(kWindowB, 64);
  alloc::PagePool a(mmu_, as_, 0, win_);
  alloc::PagePool b(mmu_, as_, 1, win_b);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    (i % 2 ? a : b).alloc(1 + rng() % 3, 1, true);
  }
  std::set<mem::Pfn> all;
  for (auto f : a.frames()) EXPECT_TRUE(all.insert(f).second);
  for (auto f : b.frames()) EXPECT_TRUE(all.insert(f).second) << "frame " << f << " handed out twice";
  EXPECT_EQ(all.size(), a.frames().size() + b.frames().size());
}

TEST_F(AllocTest, ReleaseUnmapsThenFrees) {
  alloc::PagePool pool(mmu_, as_, 0, win_);
  const auto r = pool.alloc(2, 1, true);
  const auto in_use = mmu_.phys().in_use();
  pool.release();
  EXPECT_EQ(mmu_.phys().in_use(), in_use - 2);
  EXPECT_FALSE(mmu_.lookup_pte(as_, r.base));
  std::uint8_t b;
  EXPECT_EQ(mmu_.access(r.base, 1, Access::Read, &b)->kind, mem::FaultKind::PageFault);
}

TEST_F(AllocTest, EightStacksPerPage) {
  alloc::PagePool pages(mmu_, as_, 0, win_);
  alloc::ObjectPool objs(pages, 1);
  std::set<std::uint64_t> bases;
  for (int i = 0; i < 8; ++i) bases.insert(mem::page_base(objs.alloc(512)));
  EXPECT_EQ(bases.size(), 1u);
  EXPECT_EQ(objs.num_pages(), 1u);
  const auto ninth = objs.alloc(512);
  EXPECT_EQ(objs.num_pages(), 2u);
  EXPECT_FALSE(bases.count(mem::page_base(ninth)));
}

TEST_F(AllocTest, WholePageObject) {
  alloc::PagePool pages(mmu_, as_, 0, win_);
  alloc::ObjectPool objs(pages, 1);
  const auto a = objs.alloc(4096);
  EXPECT_EQ(mem::page_offset(a), 0u);
  const auto b = objs.alloc(8);
  EXPECT_NE(mem::page_base(a), mem::page_base(b));
  EXPECT_THROW(objs.alloc(4097), AllocError);
  EXPECT_THROW(objs.alloc(0), AllocError);
}

TEST_F(AllocTest, BadFreeAndPoolFull) {
  alloc::PagePool pages(mmu_, as_, 0, win_);
  alloc::ObjectPool objs(pages, 1, 1);
  const auto a = objs.alloc(2048);
  objs.alloc(2048);
  try {
    objs.alloc(8);
    FAIL();
  } catch (const AllocError& e) {
    EXPECT_EQ(e.kind(), AllocError::Kind::PoolFull);
  }
  objs.free(a);
  try {
    objs.free(a);
    FAIL();
  } catch (const AllocError& e) {
    EXPECT_EQ(e.kind(), AllocError::Kind::BadFree);
  }
  EXPECT_THROW(objs.free(a + 8), AllocError);
  EXPECT_EQ(objs.alloc(2048), a) << "freed space is reused";
}

// Random alloc/free: live objects are pairwise disjoint, aligned and never
// straddle a page.
TEST_F(AllocTest, RandomSequenceDisjoint) {
  alloc::PagePool pages(mmu_, as_, 0, win_);
  alloc::ObjectPool objs(pages, 1, 32);
  std::mt19937_64 rng(17);
  std::vector<std::pair<std::uint64_t, std::size_t>> live;
  for (int step = 0; step < 5000; ++step) {
    if (live.empty() || rng() % 3) {
      const std::size_t size = 1 + rng() % (rng() % 4 ? 600 : 4096);
      std::uint64_t a = 0;
      try {
        a = objs.alloc(size);
      } catch (const AllocError& e) {
        ASSERT_EQ(e.kind(), AllocError::Kind::PoolFull);
        continue;
      }
      EXPECT_EQ(a % 8, 0u);
      EXPECT_EQ(mem::page_base(a), mem::page_base(a + size - 1)) << "object straddles a page";
      live.emplace_back(a, size);
    } else {
      const auto i = rng() % live.size();
      objs.free(live[i].first);
      live.erase(live.begin() + static_cast<std::ptrdiff_t>(i));
    }
    // Interval-overlap oracle over everything live.
    auto sorted = live;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i)
      ASSERT_LE(sorted[i - 1].first + sorted[i - 1].second, sorted[i].first) << "step " << step;
  }
}

TEST_F(AllocTest, ObjectsShareTheirPageKey) {
  alloc::PagePool pages(mmu_, as_, 0, win_);
  alloc::ObjectPool objs(pages, 1);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(mmu_.lookup_pte(as_, objs.alloc(300))->key, 1);
}

// ---------------------------------------------------------------------------

TEST_F(AllocTest, ReservationFaultsUntilMapped) {
  auto res = alloc::virt_reserve(mmu_, as_, win_, 1);
  std::uint8_t b;
  EXPECT_EQ(mmu_.access(res.page(0), 1, Access::Read, &b)->kind, mem::FaultKind::PageFault);
}

TEST_F(AllocTest, ReservationAliasesKernelFrame) {
  const auto frame = mmu_.phys().alloc();
  mmu_.phys().frame(frame)[9] = 17;
  auto res = alloc::virt_reserve(mmu_, as_, win_, 2);
  res.map(0, frame, 1, false);
  std::uint8_t b = 0;
  ASSERT_FALSE(mmu_.access(res.page(0) + 9, 1, Access::Read, &b));
  EXPECT_EQ(b, 17);
  // A later kernel-side write shows through the alias.
  mmu_.phys().frame(frame)[9] = 18;
  ASSERT_FALSE(mmu_.access(res.page(0) + 9, 1, Access::Read, &b));
  EXPECT_EQ(b, 18);
  EXPECT_EQ(mmu_.access(res.page(0), 1, Access::Write, &b)->kind, mem::FaultKind::WriteProtFault);
}

TEST_F(AllocTest, ReservationUnmapLeavesKernelBytes) {
  const auto frame = mmu_.phys().alloc();
  for (std::size_t i = 0; i < kPageSize; ++i) mmu_.phys().frame(frame)[i] = static_cast<std::uint8_t>(i * 7);
  const auto before = mmu_.phys().frame(frame);
  auto res = alloc::virt_reserve(mmu_, as_, win_, 1);
  res.map(0, frame, 1, true);
  std::uint8_t b;
  ASSERT_FALSE(mmu_.access(res.page(0), 1, Access::Read, &b));
  res.unmap(0);
  EXPECT_FALSE(res.backed(0));
  EXPECT_EQ(mmu_.access(res.page(0), 1, Access::Read, &b)->kind, mem::FaultKind::PageFault);
  EXPECT_EQ(mmu_.phys().frame(frame), before);
  EXPECT_TRUE(mmu_.phys().allocated(frame));
}

TEST_F(AllocTest, ReservationErrors) {
  auto res = alloc::virt_reserve(mmu_, as_, win_, 1);
  const auto frame = mmu_.phys().alloc();
  try {
    res.map(1, frame, 1, false);
    FAIL();
  } catch (const AllocError& e) {
    EXPECT_EQ(e.kind(), AllocError::Kind::OutOfRange);
  }
  res.map(0, frame, 1, false);
  try {
    res.map(0, frame, 1, false);
    FAIL();
  } catch (const AllocError& e) {
    EXPECT_EQ(e.kind(), AllocError::Kind::AlreadyBacked);
  }
  EXPECT_THROW(res.unmap(3), AllocError);
}
