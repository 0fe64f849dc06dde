#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace notifdt::store {

inline constexpr std::size_t kDefaultCapacity = 16;

// Current-model key that masks out every stored record.
inline constexpr std::string_view kIgnoreAllKey = "ignore-all";

// One circular-buffer entry. A slot is occupied iff timestamp_ms > 0.
struct SlotRecord {
  std::vector<float> floats;
  std::vector<std::int64_t> longs;
  std::vector<std::string> strings;  // strings[0] is the model-version key
  std::int64_t timestamp_ms = 0;

  bool occupied() const { return timestamp_ms > 0; }
  friend bool operator==(const SlotRecord&, const SlotRecord&) = default;
};

// Externally ingested reward components waiting for the next write.
struct PendingReward {
  std::vector<double> values;
  std::uint8_t mask = 0;  // components that received at least one event
  std::size_t events = 0;

  bool empty() const { return events == 0; }
  friend bool operator==(const PendingReward&, const PendingReward&) = default;
};

// Per-user K-slot ring. The cursor is the oldest / next-overwrite slot.
// Reads order records by persisted timestamp, never by slot position.
//
// Thread safety: concurrent reads; writes serialized per user; writes to
// different users proceed independently.
class SequenceStore {
 public:
  explicit SequenceStore(std::size_t capacity = kDefaultCapacity);
  SequenceStore(SequenceStore&&) noexcept;
  SequenceStore& operator=(SequenceStore&&) noexcept;
  ~SequenceStore();

  std::size_t capacity() const { return capacity_; }

  // Overwrites the cursor slot and advances the cursor. Throws
  // ContractError unless the timestamp is positive and strictly newer than
  // every timestamp written for the user since the last clear; throws
  // IoError while the store is marked unavailable.
  std::size_t write_partial(std::uint64_t user, SlotRecord record);

  // Up to max_len newest occupied records, oldest first. Unknown users
  // yield an empty sequence.
  std::vector<SlotRecord> read_sequence(std::uint64_t user, std::size_t max_len) const;

  // Empties every occupied slot with now - ts > ttl; returns the count.
  std::size_t evict_ttl(std::int64_t now_ms, std::int64_t ttl_ms);
  void clear_all();

  std::size_t occupancy(std::uint64_t user) const;
  std::size_t total_occupancy() const;
  std::size_t user_count() const;
  std::size_t max_occupancy() const;
  std::vector<std::uint64_t> users() const;

  // Physical view, for inspection and tests.
  std::vector<SlotRecord> raw_slots(std::uint64_t user) const;
  std::size_t cursor(std::uint64_t user) const;
  // Replaces a user's physical layout wholesale (e.g. restored from another
  // backend). Throws ContractError on a size mismatch or duplicate
  // timestamps.
  void restore_user(std::uint64_t user, std::vector<SlotRecord> slots, std::size_t cursor);

  // Componentwise sum into the user's pending buffer.
  void add_pending(std::uint64_t user, std::span<const double> values, std::uint8_t mask);
  PendingReward peek_pending(std::uint64_t user) const;
  PendingReward take_pending(std::uint64_t user);

  // Simulates an unreachable backend: writes fail with IoError.
  void set_unavailable(bool unavailable);

  void save_snapshot(const std::filesystem::path& path) const;
  static SequenceStore load_snapshot(const std::filesystem::path& path);

 private:
  struct UserBuffer;
  // Runs f(buffer) under the user's exclusive lock, creating the buffer on
  // first use.
  template <typename F>
  auto with_writer(std::uint64_t user, F&& f);
  const UserBuffer* find(std::uint64_t user) const;

  std::size_t capacity_;
  mutable std::unique_ptr<std::shared_mutex> map_mutex_;
  std::map<std::uint64_t, std::unique_ptr<UserBuffer>> users_;
  std::atomic<bool> unavailable_{false};
};

// Drops records whose model key (strings[0]) differs from current_key,
// preserving order. current_key == kIgnoreAllKey drops everything.
std::vector<SlotRecord> apply_history_mask(std::vector<SlotRecord> records, std::string_view current_key);

inline constexpr std::uint32_t kSnapshotVersion = 1;

}  // namespace notifdt::store
