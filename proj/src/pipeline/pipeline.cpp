#include "notifdt/pipeline/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "notifdt/common/errors.hpp"
#include "notifdt/common/rng.hpp"

namespace notifdt::pipeline {

std::vector<double> compute_rtg(std::span<const std::vector<double>> rewards, std::size_t t, std::size_t horizon,
                                double gamma) {
  if (t + horizon >= rewards.size()) {
    throw ContractError("compute_rtg: step " + std::to_string(t) + " needs " + std::to_string(horizon) +
                        " look-ahead steps but the log has " + std::to_string(rewards.size()) + " steps");
  }
  std::vector<double> out(rewards[t].size(), 0.0);
  double w = 1.0;
  for (std::size_t l = 0; l <= horizon; ++l) {
    const auto& r = rewards[t + l];
    if (r.size() != out.size()) throw ShapeError("compute_rtg: reward width changes within the log");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * r[i];
    w *= gamma;
  }
  return out;
}

std::vector<double> compute_rtg(const UserLog& log, std::size_t t, std::size_t horizon, double gamma) {
  std::vector<std::vector<double>> rewards;
  const std::size_t end = std::min(log.steps.size(), t + horizon + 1);
  rewards.reserve(end);
  for (std::size_t i = 0; i < end; ++i) rewards.push_back(log.steps[i].reward);
  return compute_rtg(rewards, t, horizon, gamma);
}

namespace {

// Window whose last context step is log index `last`, with `real` real
// context steps; requires last + H < L.
TrajectoryWindow make_window(const UserLog& log, const std::vector<std::vector<double>>& rewards,
                             std::size_t last, std::size_t real, const SegmentOptions& opt) {
  TrajectoryWindow w;
  w.user_id = log.user_id;
  w.context_length = opt.context_length;
  w.horizon = opt.horizon;
  w.pad_steps = opt.context_length - real;
  w.start_index = static_cast<std::int64_t>(last + 1 - real);
  w.steps.resize(opt.context_length + opt.horizon);
  for (std::size_t k = 0; k < w.steps.size(); ++k) {
    WindowStep& ws = w.steps[k];
    if (k < w.pad_steps) {
      ws.pad = true;
      continue;
    }
    const std::size_t idx = static_cast<std::size_t>(w.start_index) + (k - w.pad_steps);
    ws.step = log.steps[idx];
    if (k < opt.context_length) ws.rtg = compute_rtg(rewards, idx, opt.horizon, opt.gamma);
  }
  return w;
}

}  // namespace

std::vector<TrajectoryWindow> segment(const UserLog& log, const SegmentOptions& opt) {
  if (opt.stride == 0) throw ContractError("segment: stride must be at least 1");
  if (opt.context_length == 0) throw ContractError("segment: context length must be at least 1");
  const std::size_t T = opt.context_length, H = opt.horizon, L = log.steps.size();
  std::vector<TrajectoryWindow> out;
  if (L <= H) return out;
  std::vector<std::vector<double>> rewards;
  rewards.reserve(L);
  for (const auto& s : log.steps) rewards.push_back(s.reward);

  const std::size_t labelable = L - H;  // indices 0..L-H-1 may be context steps
  if (opt.warmup_windows) {
    const std::size_t full_end = L >= T + H ? T - 1 : labelable - 1;
    for (std::size_t last = 0; last + 1 < T && last < full_end; ++last) {
      out.push_back(make_window(log, rewards, last, last + 1, opt));
    }
  }
  if (L >= T + H) {
    const std::size_t count = (L - (T + H)) / opt.stride + 1;
    for (std::size_t k = 0; k < count; ++k) out.push_back(make_window(log, rewards, k * opt.stride + T - 1, T, opt));
  } else if (opt.pad_short) {
    out.push_back(make_window(log, rewards, labelable - 1, labelable, opt));
  }
  return out;
}

std::vector<TrajectoryWindow> segment(const InteractionLog& log, const SegmentOptions& opt) {
  std::vector<const UserLog*> users;
  for (const auto& u : log.users) users.push_back(&u);
  std::stable_sort(users.begin(), users.end(),
                   [](const UserLog* a, const UserLog* b) { return a->user_id < b->user_id; });
  std::vector<TrajectoryWindow> out;
  for (const UserLog* u : users) {
    auto ws = segment(*u, opt);
    std::stable_sort(ws.begin(), ws.end(), [](const TrajectoryWindow& a, const TrajectoryWindow& b) {
      return a.start_index != b.start_index ? a.start_index < b.start_index : a.pad_steps > b.pad_steps;
    });
    for (auto& w : ws) out.push_back(std::move(w));
  }
  return out;
}

UserSplit split_users(std::vector<std::uint64_t> user_ids, double ratio, std::uint64_t seed) {
  if (user_ids.empty()) throw ContractError("split_users: empty user list");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ContractError("split_users: ratio must lie in (0, 1)");
  std::sort(user_ids.begin(), user_ids.end());
  user_ids.erase(std::unique(user_ids.begin(), user_ids.end()), user_ids.end());
  Rng rng(derive_seed(seed, 0x73706c6974ULL));
  rng.shuffle(user_ids.begin(), user_ids.end());
  const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(user_ids.size())));
  UserSplit s;
  s.train.assign(user_ids.begin(), user_ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(user_ids.begin() + static_cast<std::ptrdiff_t>(n_train), user_ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  if (s.train.empty() || s.validation.empty()) {
    s.warnings.push_back("split of " + std::to_string(user_ids.size()) + " user(s) at ratio " +
                         std::to_string(ratio) + " leaves the " + (s.train.empty() ? "train" : "validation") +
                         " side empty");
  }
  return s;
}

std::vector<TrajectoryWindow> select_users(std::span<const TrajectoryWindow> windows,
                                           std::span<const std::uint64_t> users) {
  std::unordered_set<std::uint64_t> keep(users.begin(), users.end());
  std::vector<TrajectoryWindow> out;
  for (const auto& w : windows)
    if (keep.count(w.user_id)) out.push_back(w);
  return out;
}

std::vector<double> manual_prompt(std::span<const double> initial, std::span<const std::vector<double>> observed) {
  std::vector<double> out(initial.begin(), initial.end());
  for (const auto& r : observed) {
    if (r.size() != out.size()) throw ShapeError("manual_prompt: reward width differs from prompt width");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= r[i];
  }
  return out;
}

}  // namespace notifdt::pipeline
