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

#include <fstream>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "moat/helpers.hpp"
#include "moat/scenario.hpp"

using namespace moat;
using helpers::HelperEnv;
using helpers::MapBinding;
using isa::HelperId;

namespace {

// Byte-addressed memory with explicit valid ranges; anything else faults.
class FlatPort final : public helpers::MemoryPort {
 public:
  void allow(std::uint64_t base, std::uint64_t len) { ranges_.emplace_back(base, base + len); }

  std::optional<mem::Fault> read(std::uint64_t va, std::span<std::uint8_t> out) override {
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!ok(va + i)) return fault(va + i, mem::Access::Read);
      auto it = bytes_.find(va + i);
      out[i] = it == bytes_.end() ? 0 : it->second;
    }
    return std::nullopt;
  }
  std::optional<mem::Fault> write(std::uint64_t va, std::span<const std::uint8_t> in) override {
    for (std::size_t i = 0; i < in.size(); ++i)
      if (!ok(va + i)) return fault(va + i, mem::Access::Write);
    for (std::size_t i = 0; i < in.size(); ++i) bytes_[va + i] = in[i];
    ++writes_;
    return std::nullopt;
  }

  std::uint8_t at(std::uint64_t va) const {
    auto it = bytes_.find(va);
    return it == bytes_.end() ? 0 : it->second;
  }
  void put(std::uint64_t va, std::span<const std::uint8_t> in) {
    for (std::size_t i = 0; i < in.size(); ++i) bytes_[va + i] = in[i];
  }
  std::size_t writes() const { return writes_; }

 private:
  bool ok(std::uint64_t va) const {
    for (auto [lo, hi] : ranges_)
      if (va >= lo && va < hi) return true;
    return false;
  }
  static mem::Fault fault(std::uint64_t va, mem::Access a) { return {mem::FaultKind::PageFault, va, 0, a, -1}; }

  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges_;
  std::map<std::uint64_t, std::uint8_t> bytes_;
  std::size_t writes_ = 0;
};

constexpr std::uint64_t kData = 0x10'0000;
constexpr std::uint64_t kMeta = 0x20'0000;
constexpr std::uint64_t kScratch = 0x30'0000;
constexpr std::uint64_t kCtx = 0x40'0000;
constexpr std::uint64_t kBounce = 0x50'0000;

MapBinding array_binding(std::uint32_t value_size, std::uint32_t entries) {
  const auto bytes = (std::uint64_t{value_size} * entries + mem::kPageSize - 1) / mem::kPageSize * mem::kPageSize;
  return {{"m", isa::MapKind::Array, value_size, entries}, kData, bytes, kMeta};
}

}  // namespace

TEST(ArrayMap, LookupStrideAndBounds) {
  for (std::uint32_t vs : {1u, 8u, 24u, 100u, 4096u}) {
    const auto b = array_binding(vs, 10);
    helpers::ArrayMap m(b);
    EXPECT_EQ(m.lookup(0), kData);
    EXPECT_EQ(m.lookup(10), 0u);
    EXPECT_EQ(m.lookup(~0ULL), 0u);
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 10; ++i) {
      const auto a = m.lookup(i);
      EXPECT_EQ(a, kData + i * vs);
      // [a, a+vs) disjoint from every earlier element.
      for (auto s : seen) EXPECT_TRUE(a + vs <= s || s + vs <= a);
      seen.insert(a);
      EXPECT_LE(a + vs, b.data_base + b.data_bytes);
    }
  }
  EXPECT_EQ(array_binding(8, 1).data_bytes, mem::kPageSize);
  EXPECT_EQ(array_binding(8, 513).data_bytes, 2 * mem::kPageSize);
}

TEST(ArrayMap, UpdateThenRead) {
  const auto b = array_binding(8, 2);
  FlatPort port;
  port.allow(kData, b.data_bytes);
  port.allow(kScratch, 64);
  const std::uint8_t v[8] = {1, 2, 3, 4, 5, 6, 7, 8};
  port.put(kScratch, v);
  helpers::ArrayMap m(b);
  std::optional<mem::Fault> f;
  EXPECT_EQ(m.update(port, 1, kScratch, f), 0);
  EXPECT_FALSE(f);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(port.at(m.lookup(1) + i), v[i]);
  EXPECT_EQ(m.update(port, 2, kScratch, f), helpers::kErrRange);
  EXPECT_EQ(m.remove(port, 2, f), helpers::kErrRange);
  EXPECT_EQ(m.remove(port, 1, f), 0);
  EXPECT_EQ(port.at(m.lookup(1)), 0);
}

TEST(ArrayMap, MatchesPlainModel) {
  std::mt19937_64 rng(8);
  const std::uint32_t vs = 12, n = 40;
  const auto b = array_binding(vs, n);
  FlatPort port;
  port.allow(kData, b.data_bytes);
  port.allow(kScratch, 64);
  helpers::ArrayMap m(b);
  std::vector<std::vector<std::uint8_t>> model(n, std::vector<std::uint8_t>(vs, 0));
  for (int step = 0; step < 4000; ++step) {
    const auto idx = rng() % (n + 4);  // some out of range
    std::optional<mem::Fault> f;
    switch (rng() % 3) {
      case 0: {
        std::vector<std::uint8_t> v(vs);
        for (auto& x : v) x = static_cast<std::uint8_t>(rng());
        port.put(kScratch, v);
        const auto rc = m.update(port, idx, kScratch, f);
        ASSERT_FALSE(f);
        if (idx < n) {
          ASSERT_EQ(rc, 0);
          model[idx] = v;
        } else {
          ASSERT_EQ(rc, helpers::kErrRange);
        }
        break;
      }
      case 1: {
        const auto rc = m.remove(port, idx, f);
        if (idx < n) {
          ASSERT_EQ(rc, 0);
          std::fill(model[idx].begin(), model[idx].end(), 0);
        } else {
          ASSERT_EQ(rc, helpers::kErrRange);
        }
        break;
      }
      default: {
        const auto a = m.lookup(idx);
        if (idx >= n) {
          ASSERT_EQ(a, 0u);
          break;
        }
        for (std::uint32_t i = 0; i < vs; ++i) ASSERT_EQ(port.at(a + i), model[idx][i]) << "step " << step;
      }
    }
  }
}

TEST(Ringbuf, ReserveAndSubmit) {
  MapBinding b{{"rb", isa::MapKind::Ringbuf, 4096, 1}, kData, mem::kPageSize, kMeta};
  FlatPort port;
  port.allow(kData, b.data_bytes);
  helpers::RingbufMap rb(b);
  std::optional<mem::Fault> f;
  EXPECT_EQ(rb.capacity(), mem::kPageSize - helpers::kRingbufHeaderBytes);
  EXPECT_EQ(rb.reserve(port, 0, f), 0u);
  EXPECT_EQ(rb.reserve(port, helpers::kIntMax, f), 0u);
  EXPECT_EQ(rb.reserve(port, rb.capacity() + 1, f), 0u);
  const auto r1 = rb.reserve(port, 20, f);
  ASSERT_NE(r1, 0u);
  EXPECT_EQ(r1, kData + helpers::kRingbufHeaderBytes + helpers::kRingbufRecordHeader);
  const auto r2 = rb.reserve(port, 8, f);
  EXPECT_EQ(r2, r1 + 24 + helpers::kRingbufRecordHeader);
  EXPECT_EQ(rb.submit(port, r1, f), 0);
  EXPECT_EQ(port.at(r1 - 1), 0x80);
  EXPECT_EQ(rb.submit(port, kData, f), helpers::kErrInval);
  // Fill up, then further reservations fail without touching memory.
  while (rb.reserve(port, 512, f)) {
  }
  const auto writes = port.writes();
  EXPECT_EQ(rb.reserve(port, 512, f), 0u);
  EXPECT_EQ(port.writes(), writes);
  EXPECT_FALSE(f);
}

TEST(Invoke, DefectiveReserveOverrunsIntoMetadata) {
  const auto b = array_binding(8, 16);
  std::vector<MapBinding> maps{b};
  FlatPort port;
  port.allow(kData, b.data_bytes);
  port.allow(kData + b.data_bytes, 8);  // the metadata page follows the data
  HelperEnv env{port, maps, kBounce, 0xdead'0000ULL, false};
  auto r = helpers::invoke(HelperId::RingbufReserve, env, {0, 64, 0, 0, 0});
  EXPECT_EQ(r.r0, 0u) << "unarmed: an array is not a ring buffer";
  EXPECT_EQ(port.writes(), 0u);

  env.defect_armed = true;
  r = helpers::invoke(HelperId::RingbufReserve, env, {0, 64, 0, 0, 0});
  EXPECT_FALSE(r.fault);
  EXPECT_EQ(r.r0, 0xdead'0000ULL);
  EXPECT_EQ(port.at(kData + b.data_bytes), 64) << "the word lands right after the data region";
}

TEST(Invoke, MapHelpersByHandle) {
  const auto b = array_binding(8, 4);
  std::vector<MapBinding> maps{b};
  FlatPort port;
  port.allow(kData, b.data_bytes);
  HelperEnv env{port, maps, kBounce, 0, false};
  EXPECT_EQ(helpers::invoke(HelperId::MapLookup, env, {0, 3, 0, 0, 0}).r0, kData + 24);
  EXPECT_EQ(helpers::invoke(HelperId::MapLookup, env, {0, 4, 0, 0, 0}).r0, 0u);
  EXPECT_EQ(helpers::invoke(HelperId::MapLookup, env, {1, 0, 0, 0, 0}).r0, 0u);
  EXPECT_EQ(static_cast<std::int64_t>(helpers::invoke(HelperId::MapDelete, env, {5, 0, 0, 0, 0}).r0), helpers::kErrInval);
}

// ---------------------------------------------------------------------------
// skb_load through a context laid out as: u32 length, pad, packet bytes.

namespace {

struct SkbFixture {
  FlatPort port;
  std::vector<MapBinding> maps;
  HelperEnv env{port, maps, kBounce, 0, false};

  explicit SkbFixture(const std::vector<std::uint8_t>& pkt) {
    port.allow(kCtx, 8 + pkt.size());
    port.allow(kBounce, helpers::kSkbLoadMaxLen);
    port.allow(kScratch, 512);
    const auto len = static_cast<std::uint32_t>(pkt.size());
    const std::uint8_t hdr[4] = {static_cast<std::uint8_t>(len), static_cast<std::uint8_t>(len >> 8),
                                 static_cast<std::uint8_t>(len >> 16), static_cast<std::uint8_t>(len >> 24)};
    port.put(kCtx, hdr);
    port.put(kCtx + 8, pkt);
  }
};

}  // namespace

TEST(SkbLoad, ProtocolByteMatchesPacketFile) {
  // The sample inputs shipped next to the program.
  std::ifstream in(std::string(MOAT_SOURCE_DIR) + "/programs/byte-counter.hex");
  ASSERT_TRUE(in);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto packets = scenario::parse_packets(text);
  ASSERT_FALSE(packets.empty());
  for (const auto& pkt : packets) {
    SkbFixture fx(pkt);
    const auto r = helpers::invoke(HelperId::SkbLoad, fx.env, {kCtx, 9, kScratch, 1, 0});
    ASSERT_FALSE(r.fault);
    EXPECT_EQ(r.r0, 0u);
    EXPECT_EQ(fx.port.at(kScratch), pkt[9]);
  }
}

TEST(SkbLoad, EmptyAndOutOfRange) {
  SkbFixture fx(std::vector<std::uint8_t>(20, 0xee));
  auto r = helpers::invoke(HelperId::SkbLoad, fx.env, {kCtx, 0, kScratch, 0, 0});
  EXPECT_EQ(r.r0, 0u);
  EXPECT_EQ(fx.port.writes(), 0u);
  r = helpers::invoke(HelperId::SkbLoad, fx.env, {kCtx, 21, kScratch, 1, 0});
  EXPECT_EQ(static_cast<std::int64_t>(r.r0), helpers::kErrRange);
  r = helpers::invoke(HelperId::SkbLoad, fx.env, {kCtx, 16, kScratch, 8, 0});
  EXPECT_EQ(static_cast<std::int64_t>(r.r0), helpers::kErrRange);
  r = helpers::invoke(HelperId::SkbLoad, fx.env, {kCtx, 12, kScratch, 8, 0});
  EXPECT_EQ(r.r0, 0u);
  EXPECT_EQ(fx.port.at(kScratch + 7), 0xee);
}

TEST(SkbLoad, LongCopyOverrunsBounceBuffer) {
  SkbFixture fx(std::vector<std::uint8_t>(0x100, 1));
  const auto r = helpers::invoke(HelperId::SkbLoad, fx.env, {kCtx, 0, kScratch, 0x21, 0});
  ASSERT_TRUE(r.fault);
  EXPECT_EQ(r.fault->vaddr, kBounce + helpers::kSkbLoadMaxLen);
}

// ---------------------------------------------------------------------------

TEST(Signatures, EveryScalarHasAnExpectedRange) {
  const auto& t = helpers::SignatureTable::standard();
  EXPECT_NO_THROW(t.validate());
  for (auto id : isa::kAllHelpers) {
    const auto& sig = t.get(id);
    EXPECT_EQ(sig.id, id);
    EXPECT_LE(sig.args.size(), 5u);
    for (const auto& a : sig.args)
      if (a.kind == helpers::ArgKind::Scalar) EXPECT_NE(a.expected, ValueRange::full());
  }
  const auto& rr = t.get(HelperId::RingbufReserve);
  EXPECT_EQ(rr.ret, helpers::RetKind::MemOrNull);
  EXPECT_EQ(t.get(HelperId::SkbLoad).args[3].expected, ValueRange::from_u64(0, 0x20));
}

TEST(Signatures, WithExpectedCopies) {
  const auto& std_table = helpers::SignatureTable::standard();
  const auto loose = std_table.with_expected(HelperId::SkbLoad, 3, ValueRange::from_u64(0, 0xba));
  EXPECT_EQ(loose.get(HelperId::SkbLoad).args[3].expected.umax, 0xbau);
  EXPECT_EQ(std_table.get(HelperId::SkbLoad).args[3].expected.umax, 0x20u);
  EXPECT_THROW(std_table.with_expected(HelperId::SkbLoad, 0, ValueRange::point(0)), std::invalid_argument);
  EXPECT_THROW(loose.with_expected(HelperId::SkbLoad, 3, ValueRange::full()).validate(), std::logic_error);
}
