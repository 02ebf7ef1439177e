// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "aptsim/domain.hpp"

namespace aptsim {

using BlockId = std::int64_t;

enum class VectorKind : std::uint8_t { K = 0, V = 1, H = 2 };

inline std::string_view to_string(VectorKind k) {
  switch (k) {
    case VectorKind::K: return "K";
    case VectorKind::V: return "V";
    case VectorKind::H: return "H";
  }
  return "?";
}

class OutOfMemory : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BlockSlot {
  BlockId block = 0;
  Tokens filled = 0;
};

/// Token-position to block mapping for one request. Block ids need not be contiguous.
struct CacheMap {
  RequestId request = 0;
  CacheType type = CacheType::None;
  std::array<std::vector<BlockSlot>, 3> lists;
  Tokens total_tokens = 0;

  const std::vector<BlockSlot>& list(VectorKind k) const { return lists[static_cast<int>(k)]; }
  std::vector<BlockSlot>& list(VectorKind k) { return lists[static_cast<int>(k)]; }

  std::int64_t block_count() const {
    return static_cast<std::int64_t>(lists[0].size() + lists[1].size() + lists[2].size());
  }
};

inline std::span<const VectorKind> kinds_of(CacheType t) {
  static constexpr std::array<VectorKind, 2> kv{VectorKind::K, VectorKind::V};
  static constexpr std::array<VectorKind, 1> h{VectorKind::H};
  switch (t) {
    case CacheType::KV: return kv;
    case CacheType::Hidden: return h;
    case CacheType::None: break;
  }
  throw ContractError("cache type None has no vector kinds");
}

/// Unified block pool: every block holds `block_size` token positions of
/// exactly one vector kind (K, V or hidden) for exactly one request.
/// Free blocks are handed out lowest id first.
class BlockPool {
 public:
  BlockPool(std::int64_t total_blocks, Tokens block_size)
      : total_blocks_(total_blocks), block_size_(block_size), owner_(static_cast<std::size_t>(total_blocks)) {
    if (total_blocks < 1) throw ContractError("BlockPool: total_blocks must be >= 1");
    if (block_size < 1) throw ContractError("BlockPool: block_size must be >= 1");
    for (BlockId b = 0; b < total_blocks; ++b) free_.insert(free_.end(), b);
  }

  std::int64_t total_blocks() const { return total_blocks_; }
  Tokens block_size() const { return block_size_; }
  std::int64_t free_blocks() const { return static_cast<std::int64_t>(free_.size()); }
  std::int64_t used_blocks() const { return total_blocks_ - free_blocks(); }

  bool contains(RequestId id) const { return maps_.contains(id); }
  const CacheMap& map(RequestId id) const {
    auto it = maps_.find(id);
    if (it == maps_.end()) throw ContractError("no cache map for request " + std::to_string(id));
    return it->second;
  }
  const std::map<RequestId, CacheMap>& maps() const { return maps_; }

  const CacheMap& allocate(RequestId id, CacheType type, Tokens token_count) {
    if (maps_.contains(id)) throw ContractError("allocate: request " + std::to_string(id) + " already mapped");
    if (token_count < 0) throw ContractError("allocate: negative token count");
    const std::int64_t need = blocks_needed(token_count, type, block_size_);
    if (need > free_blocks()) {
      throw OutOfMemory("allocate: request " + std::to_string(id) + " needs " + std::to_string(need) +
                        " blocks, " + std::to_string(free_blocks()) + " free");
    }
    CacheMap m;
    m.request = id;
    m.type = type;
    auto& placed = maps_.emplace(id, std::move(m)).first->second;
    grow(placed, token_count);
    return placed;
  }

  /// Blocks an extension by `extra_tokens` would take from the free set.
  std::int64_t extension_blocks(RequestId id, Tokens extra_tokens) const {
    const CacheMap& m = map(id);
    return blocks_needed(m.total_tokens + extra_tokens, m.type, block_size_) -
           blocks_needed(m.total_tokens, m.type, block_size_);
  }

  const CacheMap& extend(RequestId id, Tokens extra_tokens) {
    if (extra_tokens < 0) throw ContractError("extend: negative token count");
    auto it = maps_.find(id);
    if (it == maps_.end()) throw ContractError("extend: no cache map for request " + std::to_string(id));
    const std::int64_t need = extension_blocks(id, extra_tokens);
    if (need > free_blocks()) {
      throw OutOfMemory("extend: request " + std::to_string(id) + " needs " + std::to_string(need) +
                        " more blocks, " + std::to_string(free_blocks()) + " free");
    }
    grow(it->second, extra_tokens);
    return it->second;
  }

  /// Idempotent: unknown requests release nothing.
  std::int64_t free(RequestId id) {
    auto it = maps_.find(id);
    if (it == maps_.end()) return 0;
    std::int64_t released = 0;
    for (auto& list : it->second.lists) {
      for (const auto& slot : list) {
        owner_[static_cast<std::size_t>(slot.block)].reset();
        free_.insert(slot.block);
        ++released;
      }
    }
    maps_.erase(it);
    return released;
  }

  bool can_fit(std::span<const std::pair<CacheType, Tokens>> demands) const {
    std::int64_t total = 0;
    for (const auto& [type, tokens] : demands) total += blocks_needed(tokens, type, block_size_);
    return total <= free_blocks();
  }

  /// Full scan of the pool invariants; returns a description of the first violation.
  std::optional<std::string> check_invariants() const {
    std::int64_t owned = 0;
    std::vector<int> seen(static_cast<std::size_t>(total_blocks_), 0);
    for (const auto& [id, m] : maps_) {
      for (int k = 0; k < 3; ++k) {
        const auto& list = m.lists[static_cast<std::size_t>(k)];
        for (std::size_t i = 0; i < list.size(); ++i) {
          const auto& slot = list[i];
          if (slot.block < 0 || slot.block >= total_blocks_) return "block id out of range";
          if (seen[static_cast<std::size_t>(slot.block)]++) return "block " + std::to_string(slot.block) + " aliased";
          const auto& own = owner_[static_cast<std::size_t>(slot.block)];
          if (!own || own->first != id || own->second != static_cast<VectorKind>(k)) return "owner table mismatch";
          if (free_.contains(slot.block)) return "owned block in free set";
          if (i + 1 < list.size() && slot.filled != block_size_) return "non-tail block not full";
          if (slot.filled < 1 || slot.filled > block_size_) return "bad fill count";
          ++owned;
        }
      }
      const auto& kl = m.list(VectorKind::K);
      const auto& vl = m.list(VectorKind::V);
      const auto& hl = m.list(VectorKind::H);
      const std::int64_t per_kind = ceil_div(m.total_tokens, block_size_);
      if (m.type == CacheType::KV) {
        if (!hl.empty()) return "KV map holds hidden blocks";
        if (kl.size() != vl.size()) return "K/V list length mismatch";
        for (std::size_t i = 0; i < kl.size(); ++i) {
          if (kl[i].filled != vl[i].filled) return "K/V fill mismatch";
        }
        if (static_cast<std::int64_t>(kl.size()) != per_kind) return "KV block count does not match tokens";
      } else if (m.type == CacheType::Hidden) {
        if (!kl.empty() || !vl.empty()) return "hidden map holds K/V blocks";
        if (static_cast<std::int64_t>(hl.size()) != per_kind) return "hidden block count does not match tokens";
      } else {
        return "map with cache type None";
      }
    }
    std::int64_t owner_count = 0;
    for (const auto& o : owner_) owner_count += o.has_value();
    if (owner_count != owned) return "owner table has orphaned entries";
    if (free_blocks() + owned != total_blocks_) return "conservation violated";
    return std::nullopt;
  }

  /// Debug dump: {"total_blocks", "block_size", "free", "owners": {block: {request, kind}}}.
  nlohmann::json to_json() const {
    nlohmann::json owners = nlohmann::json::object();
    for (BlockId b = 0; b < total_blocks_; ++b) {
      if (const auto& o = owner_[static_cast<std::size_t>(b)]) {
        owners[std::to_string(b)] = {{"request", o->first}, {"kind", to_string(o->second)}};
      }
    }
    return {{"schema_version", 1},
            {"total_blocks", total_blocks_},
            {"block_size", block_size_},
            {"free", free_blocks()},
            {"owners", std::move(owners)}};
  }

 private:
  BlockId take_block(RequestId id, VectorKind kind) {
    auto it = free_.begin();
    BlockId b = *it;
    free_.erase(it);
    owner_[static_cast<std::size_t>(b)] = std::make_pair(id, kind);
    return b;
  }

  // Caller has verified capacity.
  void grow(CacheMap& m, Tokens extra) {
    for (VectorKind kind : kinds_of(m.type)) {
      auto& list = m.list(kind);
      Tokens remaining = extra;
      if (!list.empty() && remaining > 0) {
        auto& tail = list.back();
        const Tokens take = std::min(remaining, block_size_ - tail.filled);
        tail.filled += take;
        remaining -= take;
      }
      while (remaining > 0) {
        const Tokens take = std::min(remaining, block_size_);
        list.push_back({take_block(m.request, kind), take});
        remaining -= take;
      }
    }
    m.total_tokens += extra;
  }

  std::int64_t total_blocks_;
  Tokens block_size_;
  std::set<BlockId> free_;
  std::vector<std::optional<std::pair<RequestId, VectorKind>>> owner_;
  std::map<RequestId, CacheMap> maps_;
};

}  // namespace aptsim
