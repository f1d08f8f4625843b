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

#include "moat/helpers.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace moat::helpers {

using isa::HelperId;

// ---------------------------------------------------------------------------
// Signatures

const SignatureTable& SignatureTable::standard() {
  static const SignatureTable table = [] {
    SignatureTable t;
    const auto u32_key = ValueRange::from_u64(0, 0xffffffff);
    const auto zero = ValueRange::point(0);

    ArgSpec array_map{ArgKind::MapHandle};
    array_map.map_kind = isa::MapKind::Array;
    ArgSpec ringbuf_map{ArgKind::MapHandle};
    ringbuf_map.map_kind = isa::MapKind::Ringbuf;
    ArgSpec key{ArgKind::Scalar, u32_key};
    ArgSpec flags{ArgKind::Scalar, zero};

    // Oversized reservations are refused at run time with a null return, so
    // the expectation only bounds the request to a positive int.
    ArgSpec rb_size{ArgKind::Scalar, ValueRange::from_u64(0, kIntMax)};
    rb_size.must_be_const = true;

    ArgSpec dst{ArgKind::MemWritable};
    dst.size_arg = 3;

    t.sigs_[static_cast<std::size_t>(HelperId::MapLookup)] = {HelperId::MapLookup, {array_map, key}, RetKind::MapValueOrNull};
    t.sigs_[static_cast<std::size_t>(HelperId::MapUpdate)] = {
        HelperId::MapUpdate, {array_map, key, ArgSpec{ArgKind::MemReadable}}, RetKind::Scalar};
    t.sigs_[static_cast<std::size_t>(HelperId::MapDelete)] = {HelperId::MapDelete, {array_map, key}, RetKind::Scalar};
    t.sigs_[static_cast<std::size_t>(HelperId::RingbufReserve)] = {
        HelperId::RingbufReserve, {ringbuf_map, rb_size, flags}, RetKind::MemOrNull};
    t.sigs_[static_cast<std::size_t>(HelperId::RingbufSubmit)] = {
        HelperId::RingbufSubmit, {ArgSpec{ArgKind::RingbufMem}, flags}, RetKind::Scalar};
    t.sigs_[static_cast<std::size_t>(HelperId::SkbLoad)] = {
        HelperId::SkbLoad,
        {ArgSpec{ArgKind::Ctx}, ArgSpec{ArgKind::Scalar, ValueRange::from_u64(0, 0xffff)}, dst,
         ArgSpec{ArgKind::Scalar, ValueRange::from_u64(0, kSkbLoadMaxLen)}},
        RetKind::Scalar};
    t.validate();
    return t;
  }();
  return table;
}

SignatureTable SignatureTable::with_expected(isa::HelperId id, std::size_t arg, ValueRange expected) const {
  SignatureTable t = *this;
  auto& sig = t.sigs_[static_cast<std::size_t>(id)];
  if (arg >= sig.args.size() || sig.args[arg].kind != ArgKind::Scalar)
    throw std::invalid_argument(fmt::format("{} argument {} is not a scalar", isa::helper_name(id), arg));
  sig.args[arg].expected = expected;
  return t;
}

void SignatureTable::validate() const {
  for (auto id : isa::kAllHelpers) {
    const auto& sig = get(id);
    if (sig.id != id) throw std::logic_error(fmt::format("helper {} not registered", isa::helper_name(id)));
    if (sig.args.size() > 5) throw std::logic_error(fmt::format("helper {} takes more than 5 arguments", isa::helper_name(id)));
    for (std::size_t k = 0; k < sig.args.size(); ++k) {
      const auto& a = sig.args[k];
      if (a.kind == ArgKind::Scalar && a.expected == ValueRange::full())
        throw std::logic_error(fmt::format("helper {} r{} has no expected range", isa::helper_name(id), k + 1));
    }
  }
}

// ---------------------------------------------------------------------------
// Maps

std::optional<mem::Fault> MemoryPort::read_u64(std::uint64_t va, std::uint64_t& out) {
  std::array<std::uint8_t, 8> b{};
  if (auto f = read(va, b)) return f;
  out = 0;
  for (int i = 0; i < 8; ++i) out |= std::uint64_t{b[i]} << (8 * i);
  return std::nullopt;
}

std::optional<mem::Fault> MemoryPort::write_u64(std::uint64_t va, std::uint64_t v) {
  std::array<std::uint8_t, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  return write(va, b);
}

std::uint64_t ArrayMap::lookup(std::uint64_t index) const {
  if (index >= b_.decl.n_entries) return 0;
  return b_.data_base + index * b_.decl.value_size;
}

std::int64_t ArrayMap::update(MemoryPort& mem, std::uint64_t index, std::uint64_t src,
                              std::optional<mem::Fault>& fault) const {
  const auto dst = lookup(index);
  if (!dst) return kErrRange;
  std::vector<std::uint8_t> buf(b_.decl.value_size);
  if ((fault = mem.read(src, buf))) return 0;
  if ((fault = mem.write(dst, buf))) return 0;
  return 0;
}

std::int64_t ArrayMap::remove(MemoryPort& mem, std::uint64_t index, std::optional<mem::Fault>& fault) const {
  const auto dst = lookup(index);
  if (!dst) return kErrRange;
  std::vector<std::uint8_t> zero(b_.decl.value_size, 0);
  fault = mem.write(dst, zero);
  return 0;
}

std::uint64_t RingbufMap::reserve(MemoryPort& mem, std::uint64_t size, std::optional<mem::Fault>& fault) const {
  if (size == 0 || size > capacity()) return 0;
  std::uint64_t prod = 0;
  if ((fault = mem.read_u64(b_.data_base, prod))) return 0;
  const auto need = kRingbufRecordHeader + (size + 7) / 8 * 8;
  if (prod > capacity() || need > capacity() - prod) return 0;
  const auto rec = b_.data_base + kRingbufHeaderBytes + prod;
  if ((fault = mem.write_u64(rec, size))) return 0;
  if ((fault = mem.write_u64(b_.data_base, prod + need))) return 0;
  return rec + kRingbufRecordHeader;
}

std::int64_t RingbufMap::submit(MemoryPort& mem, std::uint64_t rec, std::optional<mem::Fault>& fault) const {
  const auto lo = b_.data_base + kRingbufHeaderBytes + kRingbufRecordHeader;
  if (rec < lo || rec >= b_.data_base + b_.data_bytes) return kErrInval;
  std::uint64_t len = 0;
  if ((fault = mem.read_u64(rec - kRingbufRecordHeader, len))) return 0;
  // Bit 63 of the record header marks it committed.
  fault = mem.write_u64(rec - kRingbufRecordHeader, len | (std::uint64_t{1} << 63));
  return 0;
}

// ---------------------------------------------------------------------------
// Bodies

namespace {

const MapBinding* binding(const HelperEnv& env, std::uint64_t id) {
  if (id >= env.maps.size()) return nullptr;
  return &env.maps[id];
}

HelperResult skb_load(HelperEnv& env, std::uint64_t ctx, std::uint64_t off, std::uint64_t dst, std::uint64_t len) {
  HelperResult r;
  std::uint64_t pkt_len = 0;
  std::array<std::uint8_t, 4> hdr{};
  if ((r.fault = env.mem.read(ctx, hdr))) return r;
  for (int i = 0; i < 4; ++i) pkt_len |= std::uint64_t{hdr[i]} << (8 * i);
  if (len == 0) return r;
  if (off > pkt_len || len > pkt_len - off) {
    r.r0 = static_cast<std::uint64_t>(kErrRange);
    return r;
  }
  // Packet -> kernel bounce buffer -> destination. The bounce buffer holds
  // kSkbLoadMaxLen bytes; longer copies run past it.
  std::vector<std::uint8_t> buf(len);
  if ((r.fault = env.mem.read(ctx + 8 + off, buf))) return r;
  if ((r.fault = env.mem.write(env.bounce_addr, buf))) return r;
  if ((r.fault = env.mem.read(env.bounce_addr, buf))) return r;
  if ((r.fault = env.mem.write(dst, buf))) return r;
  return r;
}

}  // namespace

HelperResult invoke(isa::HelperId id, HelperEnv& env, const std::array<std::uint64_t, 5>& a) {
  HelperResult r;
  switch (id) {
    case HelperId::MapLookup: {
      const auto* b = binding(env, a[0]);
      if (b && b->decl.kind == isa::MapKind::Array) r.r0 = ArrayMap(*b).lookup(a[1]);
      return r;
    }
    case HelperId::MapUpdate:
    case HelperId::MapDelete: {
      const auto* b = binding(env, a[0]);
      if (!b || b->decl.kind != isa::MapKind::Array) {
        r.r0 = static_cast<std::uint64_t>(kErrInval);
        return r;
      }
      ArrayMap m(*b);
      const auto rc = id == HelperId::MapUpdate ? m.update(env.mem, a[1], a[2], r.fault) : m.remove(env.mem, a[1], r.fault);
      r.r0 = static_cast<std::uint64_t>(rc);
      return r;
    }
    case HelperId::RingbufReserve: {
      const auto* b = binding(env, a[0]);
      if (!b) return r;
      if (b->decl.kind == isa::MapKind::Ringbuf) {
        r.r0 = RingbufMap(*b).reserve(env.mem, a[1], r.fault);
        return r;
      }
      if (!env.defect_armed) return r;
      // Defect: treats the array as a ring buffer and stores its producer
      // word one past the data region, on the map's metadata page.
      if ((r.fault = env.mem.write_u64(b->data_base + b->data_bytes, a[1]))) return r;
      r.r0 = env.leak_addr;
      return r;
    }
    case HelperId::RingbufSubmit: {
      for (const auto& b : env.maps) {
        if (b.decl.kind != isa::MapKind::Ringbuf) continue;
        if (a[0] < b.data_base || a[0] >= b.data_base + b.data_bytes) continue;
        r.r0 = static_cast<std::uint64_t>(RingbufMap(b).submit(env.mem, a[0], r.fault));
        return r;
      }
      r.r0 = static_cast<std::uint64_t>(kErrInval);
      return r;
    }
    case HelperId::SkbLoad:
      return skb_load(env, a[0], a[1], a[2], a[3]);
  }
  r.r0 = static_cast<std::uint64_t>(kErrInval);
  return r;
}

}  // namespace moat::helpers
