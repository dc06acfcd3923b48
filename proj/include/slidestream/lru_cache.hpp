#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <list>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

namespace slidestream {

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t evictions = 0;
  std::size_t current_bytes = 0;  // total cost; entry count for entry-bounded caches
  std::size_t current_entries = 0;
  std::size_t capacity = 0;

  std::uint64_t lookups() const { return hits + misses; }
  double hit_rate() const {
    return lookups() == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(lookups());
  }
};

/// Strict LRU bounded by total cost. Entry-bounded caches use a cost of 1.
/// All members are safe to call concurrently; `stats()` is a consistent
/// snapshot.
template <class Key, class Value, class Hash = std::hash<Key>>
class LruCache {
 public:
  using CostFn = std::function<std::size_t(const Value&)>;

  LruCache(std::size_t capacity, CostFn cost) : capacity_(capacity), cost_(std::move(cost)) {}

  /// Counted lookup: a hit refreshes recency.
  std::optional<Value> get(const Key& key) {
    std::lock_guard lock(mutex_);
    const auto it = index_.find(key);
    if (it == index_.end()) {
      ++stats_.misses;
      return std::nullopt;
    }
    ++stats_.hits;
    order_.splice(order_.begin(), order_, it->second);
    return it->second->value;
  }

  /// Uncounted presence check; does not touch recency.
  bool contains(const Key& key) const {
    std::lock_guard lock(mutex_);
    return index_.count(key) != 0;
  }

  /// Inserts or replaces `key` as most recently used and returns the keys
  /// evicted to make room, oldest first. A value costing more than the
  /// whole capacity is not stored.
  std::vector<Key> put(const Key& key, Value value) {
    const std::size_t cost = cost_(value);
    std::lock_guard lock(mutex_);
    std::vector<Key> evicted;
    if (const auto it = index_.find(key); it != index_.end()) {
      stats_.current_bytes -= it->second->cost;
      order_.erase(it->second);
      index_.erase(it);
    }
    if (cost > capacity_) {
      sync_entries();
      return evicted;
    }
    while (stats_.current_bytes + cost > capacity_ && !order_.empty()) {
      Node& victim = order_.back();
      evicted.push_back(victim.key);
      stats_.current_bytes -= victim.cost;
      index_.erase(victim.key);
      order_.pop_back();
      ++stats_.evictions;
    }
    order_.push_front(Node{key, std::move(value), cost});
    index_.emplace(key, order_.begin());
    stats_.current_bytes += cost;
    sync_entries();
    return evicted;
  }

  bool erase(const Key& key) {
    std::lock_guard lock(mutex_);
    const auto it = index_.find(key);
    if (it == index_.end()) return false;
    stats_.current_bytes -= it->second->cost;
    order_.erase(it->second);
    index_.erase(it);
    sync_entries();
    return true;
  }

  CacheStats stats() const {
    std::lock_guard lock(mutex_);
    CacheStats s = stats_;
    s.capacity = capacity_;
    return s;
  }

  std::size_t capacity() const { return capacity_; }

 private:
  struct Node {
    Key key;
    Value value;
    std::size_t cost;
  };

  void sync_entries() { stats_.current_entries = order_.size(); }

  std::size_t capacity_;
  CostFn cost_;
  mutable std::mutex mutex_;
  std::list<Node> order_;
  std::unordered_map<Key, typename std::list<Node>::iterator, Hash> index_;
  CacheStats stats_;
};

}  // namespace slidestream
