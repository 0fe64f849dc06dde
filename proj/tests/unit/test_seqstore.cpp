#include <atomic>
#include <cstring>
#include <map>
#include <filesystem>
#include <thread>

#include "doctest.h"
#include "notifdt/common/errors.hpp"
#include "notifdt/common/rng.hpp"
#include "notifdt/seqstore/store.hpp"

using namespace notifdt;
using namespace notifdt::store;

namespace {

SlotRecord rec(std::int64_t ts, std::string key = "m1") {
  SlotRecord r;
  r.timestamp_ms = ts;
  r.floats = {static_cast<float>(ts) * 0.5f, 1.25f};
  r.longs = {ts % 3, 7};
  r.strings = {std::move(key), "tag"};
  return r;
}

std::vector<std::int64_t> stamps(const std::vector<SlotRecord>& rs) {
  std::vector<std::int64_t> out;
  for (const auto& r : rs) out.push_back(r.timestamp_ms);
  return out;
}

// Serialized bytes of one slot, for isolation checks.
std::string slot_bytes(const SlotRecord& s) {
  std::string out(reinterpret_cast<const char*>(&s.timestamp_ms), sizeof s.timestamp_ms);
  out.append(reinterpret_cast<const char*>(s.floats.data()), s.floats.size() * sizeof(float));
  out.append(reinterpret_cast<const char*>(s.longs.data()), s.longs.size() * sizeof(std::int64_t));
  for (const auto& str : s.strings) out += str + '\0';
  return out;
}

// Time-sorted list of unexpired records truncated to the newest K.
struct Oracle {
  std::size_t k;
  std::map<std::uint64_t, std::vector<std::int64_t>> lists;
  void write(std::uint64_t u, std::int64_t ts) {
    auto& l = lists[u];
    l.push_back(ts);
    if (l.size() > k) l.erase(l.begin());
  }
  void evict(std::int64_t now, std::int64_t ttl) {
    for (auto& [u, l] : lists) std::erase_if(l, [&](std::int64_t ts) { return now - ts > ttl; });
  }
  std::vector<std::int64_t> read(std::uint64_t u, std::size_t max_len) const {
    auto it = lists.find(u);
    if (it == lists.end()) return {};
    const auto& l = it->second;
    const std::size_t first = l.size() > max_len ? l.size() - max_len : 0;
    return {l.begin() + static_cast<std::ptrdiff_t>(first), l.end()};
  }
};

}  // namespace

TEST_CASE("five writes into four slots") {
  SequenceStore s(4);
  for (std::int64_t ts : {10, 20, 30, 40, 50}) s.write_partial(1, rec(ts));
  CHECK(stamps(s.read_sequence(1, 16)) == std::vector<std::int64_t>{20, 30, 40, 50});
  CHECK(stamps(s.read_sequence(1, 2)) == std::vector<std::int64_t>{40, 50});
  CHECK(s.occupancy(1) == 4);
  CHECK(s.cursor(1) == 1);
}

TEST_CASE("first write, monotonicity and unknown users") {
  SequenceStore s;
  CHECK(s.capacity() == 16);
  CHECK(s.read_sequence(9, 16).empty());
  CHECK(s.write_partial(9, rec(100)) == 0);
  CHECK(s.occupancy(9) == 1);
  CHECK(s.cursor(9) == 1);
  CHECK_THROWS_AS(s.write_partial(9, rec(100)), ContractError);
  CHECK_THROWS_AS(s.write_partial(9, rec(50)), ContractError);
  CHECK_THROWS_AS(s.write_partial(9, rec(0)), ContractError);
  CHECK(s.occupancy(9) == 1);
  CHECK_NOTHROW(s.write_partial(10, rec(50)));  // other users are independent
}

TEST_CASE("scrambled physical order reads identically") {
  SequenceStore a(6), b(6);
  for (std::int64_t ts : {5, 9, 13, 21}) a.write_partial(3, rec(ts));
  std::vector<SlotRecord> slots(6);
  slots[4] = rec(13);
  slots[0] = rec(21);
  slots[2] = rec(5);
  slots[5] = rec(9);
  b.restore_user(3, slots, 1);
  for (std::size_t len : {1, 2, 4, 16}) CHECK(b.read_sequence(3, len) == a.read_sequence(3, len));
  slots[1] = rec(5);
  CHECK_THROWS_AS(b.restore_user(3, slots, 1), ContractError);
}

TEST_CASE("history mask") {
  std::vector<SlotRecord> rs{rec(1, "old"), rec(2, "new"), rec(3, "old"), rec(4, "new"), rec(5, "old")};
  CHECK(apply_history_mask(rs, "new").size() == 2);
  CHECK(stamps(apply_history_mask(rs, "new")) == std::vector<std::int64_t>{2, 4});
  std::vector<SlotRecord> same{rec(1, "k"), rec(2, "k")};
  CHECK(apply_history_mask(same, "k") == same);
  CHECK(apply_history_mask(same, kIgnoreAllKey).empty());
}

TEST_CASE("ttl eviction") {
  SequenceStore s(4);
  for (std::int64_t ts : {30, 60, 90}) s.write_partial(1, rec(ts));
  CHECK(s.evict_ttl(100, 50) == 1);
  CHECK(stamps(s.read_sequence(1, 16)) == std::vector<std::int64_t>{60, 90});
  CHECK(s.evict_ttl(100, 1000) == 0);
  CHECK(s.evict_ttl(10'000, 5) == 2);
  CHECK(s.read_sequence(1, 16).empty());
  CHECK_THROWS_AS(s.evict_ttl(100, 0), ContractError);
  // Holes are refilled from the cursor onwards.
  s.write_partial(1, rec(20'000));
  CHECK(s.occupancy(1) == 1);
}

TEST_CASE("clear resets contents and monotonicity") {
  SequenceStore s(4);
  s.write_partial(1, rec(100));
  s.write_partial(2, rec(200));
  s.clear_all();
  CHECK(s.read_sequence(1, 4).empty());
  CHECK(s.total_occupancy() == 0);
  s.clear_all();
  CHECK(s.user_count() == 0);
  CHECK_NOTHROW(s.write_partial(1, rec(5)));
  CHECK(stamps(s.read_sequence(1, 4)) == std::vector<std::int64_t>{5});
}

TEST_CASE("property: random operations match the time-sorted oracle") {
  const std::size_t K = 16;
  SequenceStore s(K);
  Oracle oracle{K, {}};
  Rng rng(2024);
  std::map<std::uint64_t, std::int64_t> last_ts;
  std::int64_t clock = 1000;
  for (int op = 0; op < 20000; ++op) {
    const std::uint64_t user = rng.below(8);
    const double u = rng.uniform();
    clock += 1 + static_cast<std::int64_t>(rng.below(20));
    if (u < 0.55) {
      const auto before = s.raw_slots(user);
      const std::size_t cur = s.cursor(user);
      // Occasionally reuse the previous timestamp, which must be rejected.
      if (rng.bernoulli(0.05) && last_ts.count(user)) {
        CHECK_THROWS_AS(s.write_partial(user, rec(last_ts[user])), ContractError);
        REQUIRE(s.raw_slots(user) == before);
        continue;
      }
      const std::size_t slot = s.write_partial(user, rec(clock, rng.bernoulli(0.5) ? "a" : "b"));
      last_ts[user] = clock;
      oracle.write(user, clock);
      REQUIRE(slot == cur);
      const auto after = s.raw_slots(user);
      for (std::size_t i = 0; i < K; ++i) {
        if (i == slot) continue;
        REQUIRE(slot_bytes(after[i]) == slot_bytes(before[i]));
      }
      REQUIRE(s.occupancy(user) <= K);
    } else if (u < 0.93) {
      const std::size_t len = 1 + rng.below(20);
      REQUIRE(stamps(s.read_sequence(user, len)) == oracle.read(user, len));
    } else if (u < 0.995) {
      const std::int64_t ttl = 1 + static_cast<std::int64_t>(rng.below(2000));
      s.evict_ttl(clock, ttl);
      oracle.evict(clock, ttl);
    } else {
      s.clear_all();
      oracle.lists.clear();
      last_ts.clear();
    }
  }
  for (std::uint64_t u = 0; u < 8; ++u) CHECK(stamps(s.read_sequence(u, K)) == oracle.read(u, K));
  CHECK(s.max_occupancy() <= K);
}

TEST_CASE("snapshot round trip including pending rewards") {
  const auto path = std::filesystem::temp_directory_path() / "notifdt_test_store.snap";
  SequenceStore s(4);
  for (std::int64_t ts : {10, 20, 30, 40, 50}) s.write_partial(1, rec(ts));
  s.write_partial(2, rec(7));
  s.evict_ttl(45, 30);
  std::vector<double> visit{0.0, 1.0, 0.0};
  s.add_pending(2, visit, 0b010);
  s.add_pending(2, visit, 0b010);
  s.save_snapshot(path);
  SequenceStore t = SequenceStore::load_snapshot(path);
  CHECK(t.capacity() == 4);
  for (std::uint64_t u : {1, 2}) {
    CHECK(t.raw_slots(u) == s.raw_slots(u));
    CHECK(t.cursor(u) == s.cursor(u));
  }
  CHECK(t.peek_pending(2).values[1] == 2.0);
  CHECK(t.peek_pending(2).events == 2);
  CHECK(t.peek_pending(2) == s.peek_pending(2));
  CHECK_THROWS_AS(t.write_partial(1, rec(50)), ContractError);  // monotonicity persisted
  CHECK(t.take_pending(2).mask == 0b010);
  CHECK(t.peek_pending(2).empty());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(SequenceStore::load_snapshot(path), IoError);
}

TEST_CASE("unavailable backend rejects writes") {
  SequenceStore s(4);
  s.set_unavailable(true);
  CHECK_THROWS_AS(s.write_partial(1, rec(10)), IoError);
  s.set_unavailable(false);
  CHECK_NOTHROW(s.write_partial(1, rec(10)));
}

TEST_CASE("concurrent writers on distinct users and concurrent readers") {
  SequenceStore s(16);
  std::vector<std::thread> threads;
  for (std::uint64_t u = 0; u < 4; ++u) {
    threads.emplace_back([&s, u] {
      for (std::int64_t ts = 1; ts <= 2000; ++ts) s.write_partial(u, rec(ts));
    });
  }
  std::atomic<bool> bad{false};
  threads.emplace_back([&] {
    for (int i = 0; i < 2000; ++i) {
      auto seq = s.read_sequence(i % 4, 16);
      for (std::size_t k = 1; k < seq.size(); ++k)
        if (seq[k].timestamp_ms <= seq[k - 1].timestamp_ms) bad = true;
      for (const auto& r : seq)
        if (r.floats.size() != 2 || r.floats[0] != static_cast<float>(r.timestamp_ms) * 0.5f) bad = true;
    }
  });
  for (auto& t : threads) t.join();
  CHECK(!bad);
  for (std::uint64_t u = 0; u < 4; ++u) CHECK(stamps(s.read_sequence(u, 1)) == std::vector<std::int64_t>{2000});
}
