#include "notifdt/seqstore/store.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <set>

#include "notifdt/common/binary_io.hpp"
#include "notifdt/common/errors.hpp"

namespace notifdt::store {

struct SequenceStore::UserBuffer {
  explicit UserBuffer(std::size_t k) : slots(k) {}
  mutable std::shared_mutex mutex;
  std::vector<SlotRecord> slots;
  std::size_t cursor = 0;
  std::int64_t newest = 0;  // monotonicity floor; reset by clear_all
  PendingReward pending;

  std::size_t occupancy() const {
    return static_cast<std::size_t>(std::count_if(slots.begin(), slots.end(), [](const SlotRecord& r) {
      return r.occupied();
    }));
  }
};

SequenceStore::SequenceStore(std::size_t capacity)
    : capacity_(capacity), map_mutex_(std::make_unique<std::shared_mutex>()) {
  if (capacity_ == 0) throw ContractError("sequence store capacity must be positive");
}

SequenceStore::SequenceStore(SequenceStore&& other) noexcept
    : capacity_(other.capacity_),
      map_mutex_(std::move(other.map_mutex_)),
      users_(std::move(other.users_)),
      unavailable_(other.unavailable_.load()) {}

SequenceStore& SequenceStore::operator=(SequenceStore&& other) noexcept {
  capacity_ = other.capacity_;
  map_mutex_ = std::move(other.map_mutex_);
  users_ = std::move(other.users_);
  unavailable_ = other.unavailable_.load();
  return *this;
}
SequenceStore::~SequenceStore() = default;

const SequenceStore::UserBuffer* SequenceStore::find(std::uint64_t user) const {
  auto it = users_.find(user);
  return it == users_.end() ? nullptr : it->second.get();
}

template <typename F>
auto SequenceStore::with_writer(std::uint64_t user, F&& f) {
  for (;;) {
    {
      std::shared_lock map_lock(*map_mutex_);
      auto it = users_.find(user);
      if (it != users_.end()) {
        std::unique_lock lock(it->second->mutex);
        return f(*it->second);
      }
    }
    std::unique_lock map_lock(*map_mutex_);
    auto& slot = users_[user];
    if (!slot) slot = std::make_unique<UserBuffer>(capacity_);
  }
}

std::size_t SequenceStore::write_partial(std::uint64_t user, SlotRecord record) {
  if (unavailable_) throw IoError("sequence store unavailable");
  if (record.timestamp_ms <= 0) throw ContractError("write_partial: timestamp must be positive");
  return with_writer(user, [&](UserBuffer& b) {
    if (record.timestamp_ms <= b.newest) {
      throw ContractError("write_partial: timestamp " + std::to_string(record.timestamp_ms) +
                          " is not newer than stored " + std::to_string(b.newest) + " for user " +
                          std::to_string(user));
    }
    const std::size_t slot = b.cursor;
    b.newest = record.timestamp_ms;
    b.slots[slot] = std::move(record);
    b.cursor = (b.cursor + 1) % capacity_;
    return slot;
  });
}

std::vector<SlotRecord> SequenceStore::read_sequence(std::uint64_t user, std::size_t max_len) const {
  std::shared_lock map_lock(*map_mutex_);
  const UserBuffer* b = find(user);
  if (b == nullptr || max_len == 0) return {};
  std::shared_lock lock(b->mutex);
  std::vector<const SlotRecord*> live;
  for (const auto& s : b->slots)
    if (s.occupied()) live.push_back(&s);
  std::sort(live.begin(), live.end(),
            [](const SlotRecord* x, const SlotRecord* y) { return x->timestamp_ms < y->timestamp_ms; });
  const std::size_t first = live.size() > max_len ? live.size() - max_len : 0;
  std::vector<SlotRecord> out;
  out.reserve(live.size() - first);
  for (std::size_t i = first; i < live.size(); ++i) out.push_back(*live[i]);
  return out;
}

std::size_t SequenceStore::evict_ttl(std::int64_t now_ms, std::int64_t ttl_ms) {
  if (ttl_ms <= 0) throw ContractError("evict_ttl: ttl must be positive");
  std::unique_lock lock(*map_mutex_);
  std::size_t evicted = 0;
  for (auto& [id, b] : users_) {
    for (auto& s : b->slots) {
      if (s.occupied() && now_ms - s.timestamp_ms > ttl_ms) {
        s = SlotRecord{};
        ++evicted;
      }
    }
  }
  return evicted;
}

void SequenceStore::clear_all() {
  std::unique_lock lock(*map_mutex_);
  users_.clear();
}

std::size_t SequenceStore::occupancy(std::uint64_t user) const {
  std::shared_lock map_lock(*map_mutex_);
  const UserBuffer* b = find(user);
  if (b == nullptr) return 0;
  std::shared_lock lock(b->mutex);
  return b->occupancy();
}

std::size_t SequenceStore::total_occupancy() const {
  std::shared_lock map_lock(*map_mutex_);
  std::size_t n = 0;
  for (const auto& [id, b] : users_) {
    std::shared_lock lock(b->mutex);
    n += b->occupancy();
  }
  return n;
}

std::size_t SequenceStore::max_occupancy() const {
  std::shared_lock map_lock(*map_mutex_);
  std::size_t n = 0;
  for (const auto& [id, b] : users_) {
    std::shared_lock lock(b->mutex);
    n = std::max(n, b->occupancy());
  }
  return n;
}

std::size_t SequenceStore::user_count() const {
  std::shared_lock map_lock(*map_mutex_);
  return users_.size();
}

std::vector<std::uint64_t> SequenceStore::users() const {
  std::shared_lock map_lock(*map_mutex_);
  std::vector<std::uint64_t> out;
  for (const auto& [id, b] : users_) out.push_back(id);
  return out;
}

std::vector<SlotRecord> SequenceStore::raw_slots(std::uint64_t user) const {
  std::shared_lock map_lock(*map_mutex_);
  const UserBuffer* b = find(user);
  if (b == nullptr) return std::vector<SlotRecord>(capacity_);
  std::shared_lock lock(b->mutex);
  return b->slots;
}

std::size_t SequenceStore::cursor(std::uint64_t user) const {
  std::shared_lock map_lock(*map_mutex_);
  const UserBuffer* b = find(user);
  if (b == nullptr) return 0;
  std::shared_lock lock(b->mutex);
  return b->cursor;
}

void SequenceStore::restore_user(std::uint64_t user, std::vector<SlotRecord> slots, std::size_t cursor) {
  if (slots.size() != capacity_ || cursor >= capacity_) {
    throw ContractError("restore_user: layout does not match capacity " + std::to_string(capacity_));
  }
  std::set<std::int64_t> seen;
  std::int64_t newest = 0;
  for (const auto& s : slots) {
    if (!s.occupied()) continue;
    if (!seen.insert(s.timestamp_ms).second) throw ContractError("restore_user: duplicate timestamps");
    newest = std::max(newest, s.timestamp_ms);
  }
  with_writer(user, [&](UserBuffer& b) {
    b.slots = std::move(slots);
    b.cursor = cursor;
    b.newest = std::max(b.newest, newest);
  });
}

void SequenceStore::add_pending(std::uint64_t user, std::span<const double> values, std::uint8_t mask) {
  with_writer(user, [&](UserBuffer& b) {
    PendingReward& p = b.pending;
    if (p.values.size() < values.size()) p.values.resize(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) p.values[i] += values[i];
    p.mask |= mask;
    ++p.events;
  });
}

PendingReward SequenceStore::peek_pending(std::uint64_t user) const {
  std::shared_lock map_lock(*map_mutex_);
  const UserBuffer* b = find(user);
  if (b == nullptr) return {};
  std::shared_lock lock(b->mutex);
  return b->pending;
}

PendingReward SequenceStore::take_pending(std::uint64_t user) {
  std::shared_lock map_lock(*map_mutex_);
  auto it = users_.find(user);
  if (it == users_.end()) return {};
  std::unique_lock lock(it->second->mutex);
  return std::exchange(it->second->pending, PendingReward{});
}

void SequenceStore::set_unavailable(bool unavailable) { unavailable_ = unavailable; }

std::vector<SlotRecord> apply_history_mask(std::vector<SlotRecord> records, std::string_view current_key) {
  if (current_key == kIgnoreAllKey) return {};
  std::erase_if(records, [&](const SlotRecord& r) { return r.strings.empty() || r.strings[0] != current_key; });
  return records;
}

// ---------------------------------------------------------------------------
// snapshot

namespace {

constexpr char kSnapshotMagic[5] = "NDTS";

void write_slot(std::ostream& out, const SlotRecord& s) {
  io::write_le<std::int64_t>(out, s.timestamp_ms);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.floats.size()));
  for (float v : s.floats) io::write_le<float>(out, v);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.longs.size()));
  for (auto v : s.longs) io::write_le<std::int64_t>(out, v);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.strings.size()));
  for (const auto& v : s.strings) io::write_string(out, v);
}

SlotRecord read_slot(std::istream& in) {
  SlotRecord s;
  s.timestamp_ms = io::read_le<std::int64_t>(in);
  const auto nf = io::read_le<std::uint32_t>(in);
  s.floats.resize(nf);
  for (auto& v : s.floats) v = io::read_le<float>(in);
  const auto nl = io::read_le<std::uint32_t>(in);
  s.longs.resize(nl);
  for (auto& v : s.longs) v = io::read_le<std::int64_t>(in);
  const auto ns = io::read_le<std::uint32_t>(in);
  s.strings.resize(ns);
  for (auto& v : s.strings) v = io::read_string(in);
  return s;
}

}  // namespace

void SequenceStore::save_snapshot(const std::filesystem::path& path) const {
  std::shared_lock map_lock(*map_mutex_);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  io::write_magic(out, kSnapshotMagic);
  io::write_le<std::uint32_t>(out, kSnapshotVersion);
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(capacity_));
  io::write_le<std::uint8_t>(out, 0);  // compression flag, reserved
  io::write_le<std::uint64_t>(out, users_.size());
  for (const auto& [id, b] : users_) {
    std::shared_lock lock(b->mutex);
    io::write_le<std::uint64_t>(out, id);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(b->cursor));
    io::write_le<std::int64_t>(out, b->newest);
    io::write_le<std::uint64_t>(out, b->pending.events);
    io::write_le<std::uint8_t>(out, b->pending.mask);
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(b->pending.values.size()));
    for (double v : b->pending.values) io::write_le<double>(out, v);
    for (const auto& s : b->slots) write_slot(out, s);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

SequenceStore SequenceStore::load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open store snapshot " + path.string());
  io::expect_magic(in, kSnapshotMagic, "store snapshot");
  const auto version = io::read_le<std::uint32_t>(in);
  if (version != kSnapshotVersion) {
    throw FormatError(path.string() + ": unsupported snapshot version " + std::to_string(version));
  }
  const auto capacity = io::read_le<std::uint32_t>(in);
  const auto compression = io::read_le<std::uint8_t>(in);
  if (compression != 0) throw FormatError(path.string() + ": compressed snapshots are not supported");
  SequenceStore store(capacity);
  const auto n_users = io::read_le<std::uint64_t>(in);
  for (std::uint64_t u = 0; u < n_users; ++u) {
    const auto id = io::read_le<std::uint64_t>(in);
    auto b = std::make_unique<UserBuffer>(capacity);
    b->cursor = io::read_le<std::uint32_t>(in);
    if (b->cursor >= capacity) throw FormatError(path.string() + ": cursor out of range");
    b->newest = io::read_le<std::int64_t>(in);
    b->pending.events = io::read_le<std::uint64_t>(in);
    b->pending.mask = io::read_le<std::uint8_t>(in);
    b->pending.values.resize(io::read_le<std::uint32_t>(in));
    for (auto& v : b->pending.values) v = io::read_le<double>(in);
    for (auto& s : b->slots) s = read_slot(in);
    store.users_[id] = std::move(b);
  }
  return store;
}

}  // namespace notifdt::store
