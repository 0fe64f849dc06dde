#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "notifdt/common/errors.hpp"
#include "notifdt/pipeline/pipeline.hpp"
#include "../support/fixtures.hpp"

using namespace notifdt;
using namespace notifdt::pipeline;

namespace {

UserLog random_user(Rng& rng, std::uint64_t id, std::size_t len, std::size_t nr = 3) {
  UserLog u{id, {}};
  for (std::size_t t = 0; t < len; ++t)
    u.steps.push_back(testing::random_step(rng, 4, nr, 1000 + static_cast<std::int64_t>(t) * 1800000));
  return u;
}

std::vector<std::vector<double>> scalars(std::initializer_list<double> xs) {
  std::vector<std::vector<double>> out;
  for (double x : xs) out.push_back({x});
  return out;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() : path(std::filesystem::temp_directory_path() / "notifdt_test_pipeline") {
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("compute_rtg hand values") {
  auto r = scalars({1, 2, 3});
  CHECK(compute_rtg(r, 0, 2, 0.5)[0] == 2.75);
  CHECK(compute_rtg(scalars({2, 3}), 0, 1, 1.0)[0] == 5.0);
  for (std::size_t H = 0; H < 3; ++H) CHECK(compute_rtg(scalars({4, 7, 9}), 0, H, 0.0)[0] == 4.0);
  CHECK_THROWS_AS(compute_rtg(r, 1, 2, 0.5), ContractError);
}

TEST_CASE("window counts for the worked examples") {
  Rng rng(1);
  SegmentOptions opt;
  opt.context_length = 4;
  opt.horizon = 2;
  CHECK(segment(random_user(rng, 1, 10), opt).size() == 5);
  CHECK(segment(random_user(rng, 1, 6), opt).size() == 1);
  auto w = segment(random_user(rng, 1, 5), opt);
  REQUIRE(w.size() == 1);
  CHECK(w[0].pad_steps == 1);
  CHECK(w[0].steps[0].pad);
  CHECK(!w[0].steps[1].pad);
  CHECK(w[0].steps.size() == 6);
  opt.pad_short = false;
  CHECK(segment(random_user(rng, 1, 5), opt).empty());
  opt.pad_short = true;
  CHECK(segment(random_user(rng, 1, 2), opt).empty());
  CHECK(segment(random_user(rng, 1, 0), opt).empty());
  opt.stride = 0;
  CHECK_THROWS_AS(segment(random_user(rng, 1, 10), opt), ContractError);
}

TEST_CASE("property: window count formula over a randomized sweep") {
  Rng rng(2);
  for (int trial = 0; trial < 400; ++trial) {
    SegmentOptions opt;
    opt.context_length = 1 + rng.below(6);
    opt.horizon = rng.below(6);
    opt.stride = 1 + rng.below(4);
    opt.pad_short = rng.bernoulli(0.5);
    const std::size_t L = rng.below(25);
    const std::size_t T = opt.context_length, H = opt.horizon;
    std::size_t want = 0;
    if (L >= T + H) {
      // Brute-force enumeration of start positions.
      for (std::size_t s = 0; s + T + H <= L; s += opt.stride) ++want;
      CHECK(want == (L - (T + H)) / opt.stride + 1);
    } else if (L > H && opt.pad_short) {
      want = 1;
    }
    auto ws = segment(random_user(rng, 9, L, 1), opt);
    CHECK(ws.size() == want);
    for (const auto& w : ws) {
      CHECK(w.steps.size() == T + H);
      for (std::size_t k = w.pad_steps; k < T + H; ++k) CHECK(!w.steps[k].pad);
    }
  }
}

TEST_CASE("property: every RTG label re-derives from the raw log") {
  Rng rng(3);
  InteractionLog log;
  log.state_dim = 4;
  for (std::uint64_t u = 0; u < 12; ++u) log.users.push_back(random_user(rng, 100 - u, 3 + rng.below(20)));
  SegmentOptions opt;
  opt.context_length = 3;
  opt.horizon = 4;
  opt.gamma = 0.9;
  opt.warmup_windows = true;
  auto ws = segment(log, opt);
  REQUIRE(!ws.empty());
  std::map<std::uint64_t, const UserLog*> by_id;
  for (const auto& u : log.users) by_id[u.user_id] = &u;
  std::size_t labels = 0;
  for (std::size_t n = 0; n < ws.size(); ++n) {
    const auto& w = ws[n];
    if (n > 0) {
      CHECK((ws[n - 1].user_id < w.user_id ||
             (ws[n - 1].user_id == w.user_id && ws[n - 1].start_index <= w.start_index)));
    }
    const UserLog& u = *by_id.at(w.user_id);
    for (std::size_t k = w.pad_steps; k < w.steps.size(); ++k) {
      const std::size_t idx = static_cast<std::size_t>(w.start_index) + k - w.pad_steps;
      REQUIRE(idx < u.steps.size());
      CHECK(w.steps[k].step == u.steps[idx]);  // never crosses users
      if (k >= opt.context_length) continue;
      for (std::size_t i = 0; i < 3; ++i) {
        double want = 0;
        for (std::size_t l = 0; l <= opt.horizon; ++l)
          want += std::pow(opt.gamma, static_cast<double>(l)) * u.steps[idx + l].reward[i];
        CHECK(w.steps[k].rtg[i] == doctest::Approx(want).epsilon(1e-13));
      }
      ++labels;
    }
  }
  CHECK(labels > 0);
}

TEST_CASE("warm-up windows cover the first T-1 positions with left padding") {
  Rng rng(4);
  SegmentOptions opt;
  opt.context_length = 4;
  opt.horizon = 2;
  opt.warmup_windows = true;
  auto ws = segment(random_user(rng, 1, 10), opt);
  REQUIRE(ws.size() == 5 + 3);
  CHECK(ws[0].pad_steps == 3);
  CHECK(ws[1].pad_steps == 2);
  CHECK(ws[2].pad_steps == 1);
  for (std::size_t i = 3; i < ws.size(); ++i) CHECK(ws[i].pad_steps == 0);
  // Short log: warm-ups stop before the single padded window.
  auto short_ws = segment(random_user(rng, 1, 5), opt);
  REQUIRE(short_ws.size() == 3);
  CHECK(short_ws.back().pad_steps == 1);
}

TEST_CASE("user split") {
  std::vector<std::uint64_t> ids{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  auto s = split_users(ids, 0.7, 42);
  CHECK(s.train.size() == 7);
  CHECK(s.validation.size() == 3);
  CHECK(s.warnings.empty());
  std::set<std::uint64_t> all(s.train.begin(), s.train.end());
  for (auto v : s.validation) CHECK(all.insert(v).second);
  CHECK(all.size() == 10);
  auto again = split_users(ids, 0.7, 42);
  CHECK(again.train == s.train);
  CHECK(again.validation == s.validation);
  auto one = split_users({5}, 0.5, 1);
  CHECK((one.train.empty() || one.validation.empty()));
  CHECK(one.warnings.size() == 1);
  CHECK_THROWS_AS(split_users({}, 0.7, 1), ContractError);
  CHECK_THROWS_AS(split_users(ids, 1.0, 1), ContractError);

  Rng rng(5);
  InteractionLog log;
  log.state_dim = 4;
  for (std::uint64_t u = 1; u <= 10; ++u) log.users.push_back(random_user(rng, u, 15));
  auto ws = segment(log, SegmentOptions{});
  auto train = select_users(ws, s.train), val = select_users(ws, s.validation);
  CHECK(train.size() + val.size() == ws.size());
  std::set<std::uint64_t> train_users;
  for (const auto& w : train) train_users.insert(w.user_id);
  for (const auto& w : val) CHECK(train_users.count(w.user_id) == 0);
}

TEST_CASE("manual prompt") {
  std::vector<double> r1{10.0};
  CHECK(manual_prompt(r1, {}) == r1);
  CHECK(manual_prompt(r1, scalars({1, 2, 3}))[0] == 4.0);
  auto zero = scalars({0, 0, 0, 0});
  for (std::size_t t = 0; t <= zero.size(); ++t)
    CHECK(manual_prompt(r1, std::span(zero).first(t))[0] == 10.0);
}

TEST_CASE("dataset round trip and header guard") {
  TempDir dir;
  Rng rng(6);
  InteractionLog log;
  log.state_dim = 4;
  for (std::uint64_t u = 1; u <= 3; ++u) log.users.push_back(random_user(rng, u, 3 + 2 * u));
  SegmentOptions opt;
  opt.context_length = 4;
  opt.horizon = 2;
  opt.gamma = 0.95;
  auto ws = segment(log, opt);
  REQUIRE(ws.size() >= 5);
  ws.resize(5);
  DatasetHeader h{3, 4, 2, 4, 0.95, 0};
  write_dataset(dir.path / "d.bin", ws, h);
  Dataset d = read_dataset(dir.path / "d.bin");
  CHECK(d.header.count == 5);
  CHECK(d.windows == ws);
  CHECK_NOTHROW(read_dataset(dir.path / "d.bin", h));
  DatasetHeader other = h;
  other.context_length = 8;
  try {
    read_dataset(dir.path / "d.bin", other);
    FAIL("expected a header mismatch");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("T=4") != std::string::npos);
  }
  DatasetHeader wrong = h;
  wrong.state_dim = 7;
  CHECK_THROWS_AS(write_dataset(dir.path / "e.bin", ws, wrong), ShapeError);
  CHECK_THROWS_AS(read_dataset(dir.path / "missing.bin"), IoError);
}

TEST_CASE("log export round trip") {
  TempDir dir;
  Rng rng(7);
  InteractionLog log;
  log.state_dim = 4;
  for (std::uint64_t u = 1; u <= 4; ++u) log.users.push_back(random_user(rng, u * 11, 6));
  log.users[1].steps[2].explored = true;
  log.users[2].steps[0].state[0] = 1.0 / 3.0;
  write_log_export(dir.path / "log.csv", log);
  CHECK(read_log_export(dir.path / "log.csv") == log);
  CHECK_THROWS_AS(parse_log_export("user_id,x\n"), FormatError);
  std::string text = format_log_export(log);
  text += "44,1,SendPigeon,7,0,7,0,0,0,0,0,0,0\n";
  CHECK_THROWS_AS(parse_log_export(text), FormatError);
}
