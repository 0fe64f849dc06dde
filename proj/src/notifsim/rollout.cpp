#include "notifdt/notifsim/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "notifdt/common/errors.hpp"

namespace notifdt::sim {

std::vector<Action> AlwaysDontSendPolicy::decide(std::span<const DecisionContext> contexts) {
  return std::vector<Action>(contexts.size(), Action::kDontSend);
}

std::vector<Action> AlwaysPushPolicy::decide(std::span<const DecisionContext> contexts) {
  std::vector<Action> out;
  out.reserve(contexts.size());
  for (const auto& c : contexts)
    out.push_back(c.obs->eas.contains(Action::kSendPush) ? Action::kSendPush : Action::kDontSend);
  return out;
}

std::string BehaviorPolicy::name() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "behavior(eps=%g)", epsilon_);
  return buf;
}

void BehaviorPolicy::reset(std::uint64_t seed) {
  seed_ = seed;
  rngs_.clear();
}

std::vector<Action> BehaviorPolicy::decide(std::span<const DecisionContext> contexts) {
  std::vector<Action> out;
  out.reserve(contexts.size());
  for (const auto& c : contexts) {
    auto it = rngs_.find(c.user_id);
    if (it == rngs_.end()) it = rngs_.emplace(c.user_id, Rng(derive_seed(seed_, c.user_id, 4))).first;
    out.push_back(behavior_policy(*c.obs, cfg_, epsilon_, it->second).action);
  }
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json MetricsReport::to_json(bool include_users) const {
  nlohmann::json j = {{"policy", policy},
                      {"users", users},
                      {"decision_steps", decision_steps},
                      {"sessions", sessions},
                      {"volume", volume},
                      {"push_sends", push_sends},
                      {"badge_sends", badge_sends},
                      {"clicks", clicks},
                      {"eligible_push_steps", eligible_push_steps},
                      {"ctr", ctr},
                      {"zero_send", zero_send},
                      {"returns", returns}};
  if (include_users) {
    auto& arr = j["per_user"] = nlohmann::json::array();
    for (const auto& u : per_user) {
      arr.push_back({{"user_id", u.user_id},
                     {"steps", u.steps},
                     {"sessions", u.sessions},
                     {"push_sends", u.push_sends},
                     {"badge_sends", u.badge_sends},
                     {"clicks", u.clicks},
                     {"returns", u.returns}});
    }
  }
  return j;
}

MetricsReport summarize(std::string policy, std::vector<UserMetrics> per_user) {
  MetricsReport r;
  r.policy = std::move(policy);
  r.users = per_user.size();
  for (const auto& u : per_user) {
    r.decision_steps += u.steps;
    r.sessions += u.sessions;
    r.push_sends += u.push_sends;
    r.badge_sends += u.badge_sends;
    r.clicks += u.clicks;
    r.eligible_push_steps += u.eligible_push_steps;
    if (r.returns.size() < u.returns.size()) r.returns.resize(u.returns.size(), 0.0);
    for (std::size_t i = 0; i < u.returns.size(); ++i) r.returns[i] += u.returns[i];
  }
  r.volume = r.push_sends + r.badge_sends;
  r.zero_send = r.volume == 0;
  r.ctr = r.zero_send ? 0.0 : static_cast<double>(r.clicks) / static_cast<double>(r.volume);
  r.per_user = std::move(per_user);
  return r;
}

MetricsReport rollout(Policy& policy, const SimConfig& cfg, std::size_t n_users, std::size_t n_steps,
                      std::uint64_t seed) {
  cfg.validate();
  policy.reset(seed);
  std::vector<UserSimulator> users;
  users.reserve(n_users);
  for (std::size_t u = 0; u < n_users; ++u) users.emplace_back(cfg, u, seed);
  std::vector<UserMetrics> metrics(n_users);
  std::vector<std::vector<std::int64_t>> views(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    metrics[u].user_id = u;
    metrics[u].returns.assign(kDefaultRewardCount, 0.0);
  }
  std::vector<DecisionContext> ctx(n_users);
  std::vector<StepOutcome> outcomes(n_users);
  std::vector<Feedback> feedback(n_users);
  for (std::size_t t = 0; t < n_steps; ++t) {
    for (std::size_t u = 0; u < n_users; ++u) ctx[u] = {u, &users[u].observation()};
    const std::vector<Action> actions = policy.decide(ctx);
    if (actions.size() != n_users) {
      throw ContractError("policy " + policy.name() + " returned " + std::to_string(actions.size()) +
                          " actions for " + std::to_string(n_users) + " users");
    }
    for (std::size_t u = 0; u < n_users; ++u) {
      const Observation& obs = users[u].observation();
      UserMetrics& m = metrics[u];
      m.eligible_push_steps += obs.eas.contains(Action::kSendPush);
      const std::int64_t ts = obs.timestamp_ms;
      outcomes[u] = users[u].step(actions[u]);
      const StepOutcome& o = outcomes[u];
      ++m.steps;
      m.push_sends += actions[u] == Action::kSendPush;
      m.badge_sends += actions[u] == Action::kSendBadge;
      m.clicks += o.clicked;
      for (std::size_t i = 0; i < o.reward.size(); ++i) m.returns[i] += o.reward[i];
      views[u].insert(views[u].end(), o.page_views.begin(), o.page_views.end());
      feedback[u] = {u, t, ts, actions[u], &outcomes[u]};
    }
    policy.observe(feedback);
  }
  for (std::size_t u = 0; u < n_users; ++u) {
    std::sort(views[u].begin(), views[u].end());
    metrics[u].sessions = sessions_metric(views[u]);
  }
  return summarize(policy.name(), std::move(metrics));
}

// ---------------------------------------------------------------------------

namespace {

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double ratio(std::span<const UserMetrics> users, std::span<const std::size_t> idx,
             double (*num)(const UserMetrics&), double (*den)(const UserMetrics&), double& den_out) {
  double n = 0, d = 0;
  for (std::size_t i : idx) {
    n += num(users[i]);
    d += den(users[i]);
  }
  den_out = d;
  return d == 0 ? 0.0 : n / d;
}

double f_sessions(const UserMetrics& u) { return static_cast<double>(u.sessions); }
double f_volume(const UserMetrics& u) { return static_cast<double>(u.sends()); }
double f_clicks(const UserMetrics& u) { return static_cast<double>(u.clicks); }
double f_one(const UserMetrics&) { return 1.0; }

}  // namespace

Interval bootstrap_ratio(std::span<const UserMetrics> users, double (*num)(const UserMetrics&),
                         double (*den)(const UserMetrics&), std::size_t samples, std::uint64_t seed, double level) {
  if (users.empty() || samples == 0) return {};
  Rng rng(derive_seed(seed, 0x626f6f74ULL));
  std::vector<std::size_t> idx(users.size());
  std::vector<double> stats;
  stats.reserve(samples);
  for (std::size_t b = 0; b < samples; ++b) {
    for (auto& i : idx) i = rng.below(users.size());
    double d = 0;
    const double r = ratio(users, idx, num, den, d);
    if (d > 0) stats.push_back(r);
  }
  if (stats.empty()) return {};
  const double tail = (1.0 - level) / 2.0;
  return {percentile(stats, tail), percentile(stats, 1.0 - tail)};
}

std::string MetricDelta::display() const {
  if (undefined_baseline) return "undefined baseline";
  char buf[128];
  std::snprintf(buf, sizeof buf, "%+.2f%% [%+.2f%%, %+.2f%%]%s", delta_pct, ci.low, ci.high, nss ? " NSS" : "");
  return buf;
}

MetricDelta paired_delta(std::string metric, std::span<const UserMetrics> a, std::span<const UserMetrics> b,
                         double (*num)(const UserMetrics&), double (*den)(const UserMetrics&), std::size_t samples,
                         std::uint64_t seed) {
  if (a.size() != b.size()) throw ContractError("paired_delta: arms have different user counts");
  MetricDelta d;
  d.metric = std::move(metric);
  std::vector<std::size_t> all(a.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  double den_a = 0, den_b = 0;
  d.value_a = ratio(a, all, num, den, den_a);
  d.value_b = ratio(b, all, num, den, den_b);
  if (den_b == 0 || d.value_b == 0) {
    d.undefined_baseline = true;
    return d;
  }
  d.delta_pct = (d.value_a - d.value_b) / d.value_b * 100.0;
  Rng rng(derive_seed(seed, 0x7061697265ULL));
  std::vector<std::size_t> idx(a.size());
  std::vector<double> stats;
  stats.reserve(samples);
  for (std::size_t s = 0; s < samples; ++s) {
    for (auto& i : idx) i = rng.below(a.size());
    double da = 0, db = 0;
    const double ra = ratio(a, idx, num, den, da);
    const double rb = ratio(b, idx, num, den, db);
    if (db > 0 && rb != 0) stats.push_back((ra - rb) / rb * 100.0);
  }
  if (!stats.empty()) d.ci = {percentile(stats, 0.025), percentile(stats, 0.975)};
  d.nss = d.ci.low <= 0.0 && d.ci.high >= 0.0;
  return d;
}

nlohmann::json ABResult::to_json() const {
  nlohmann::json j = {{"policy_a", policy_a}, {"policy_b", policy_b}};
  auto& arr = j["deltas"] = nlohmann::json::array();
  for (const auto& d : deltas) {
    nlohmann::json e = {{"metric", d.metric},
                        {"a", d.value_a},
                        {"b", d.value_b},
                        {"nss", d.nss},
                        {"undefined_baseline", d.undefined_baseline},
                        {"display", d.display()}};
    if (!d.undefined_baseline) {
      e["delta_pct"] = d.delta_pct;
      e["ci_low"] = d.ci.low;
      e["ci_high"] = d.ci.high;
    }
    arr.push_back(e);
  }
  j["report_a"] = report_a.to_json();
  j["report_b"] = report_b.to_json();
  return j;
}

ABResult ab_compare(Policy& policy_a, Policy& policy_b, const SimConfig& cfg, const ABOptions& options) {
  if (options.seeds.empty()) throw ContractError("ab_compare: at least one environment seed is required");
  std::vector<UserMetrics> ua, ub;
  for (std::uint64_t seed : options.seeds) {
    MetricsReport ra = rollout(policy_a, cfg, options.n_users, options.n_steps, seed);
    MetricsReport rb = rollout(policy_b, cfg, options.n_users, options.n_steps, seed);
    ua.insert(ua.end(), ra.per_user.begin(), ra.per_user.end());
    ub.insert(ub.end(), rb.per_user.begin(), rb.per_user.end());
  }
  ABResult res;
  res.policy_a = policy_a.name();
  res.policy_b = policy_b.name();
  const std::size_t B = options.bootstrap_samples;
  const std::uint64_t s = options.bootstrap_seed;
  res.deltas.push_back(paired_delta("sessions", ua, ub, f_sessions, f_one, B, s));
  res.deltas.push_back(paired_delta("volume", ua, ub, f_volume, f_one, B, s));
  res.deltas.push_back(paired_delta("ctr", ua, ub, f_clicks, f_volume, B, s));
  res.report_a = summarize(res.policy_a, std::move(ua));
  res.report_b = summarize(res.policy_b, std::move(ub));
  return res;
}

}  // namespace notifdt::sim
