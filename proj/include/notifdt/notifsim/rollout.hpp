#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "notifdt/notifsim/simulator.hpp"

namespace notifdt::sim {

struct DecisionContext {
  std::uint64_t user_id = 0;
  const Observation* obs = nullptr;
};

struct Feedback {
  std::uint64_t user_id = 0;
  std::size_t tick = 0;
  std::int64_t timestamp_ms = 0;  // decision time of the step
  Action action = Action::kDontSend;
  const StepOutcome* outcome = nullptr;
};

// Anything that maps observations to actions. Rollouts call decide() once
// per tick with every active user, then observe() with the outcomes.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  // Called before each rollout; policies holding per-user state reset it.
  virtual void reset(std::uint64_t /*seed*/) {}
  virtual std::vector<Action> decide(std::span<const DecisionContext> contexts) = 0;
  virtual void observe(std::span<const Feedback> /*feedback*/) {}
};

class AlwaysDontSendPolicy final : public Policy {
 public:
  std::string name() const override { return "always-dont-send"; }
  std::vector<Action> decide(std::span<const DecisionContext> contexts) override;
};

// Push whenever push is eligible, otherwise DontSend.
class AlwaysPushPolicy final : public Policy {
 public:
  std::string name() const override { return "always-push"; }
  std::vector<Action> decide(std::span<const DecisionContext> contexts) override;
};

// The logging policy: heuristic with epsilon-uniform exploration.
class BehaviorPolicy final : public Policy {
 public:
  BehaviorPolicy(SimConfig cfg, double epsilon) : cfg_(std::move(cfg)), epsilon_(epsilon) {}
  std::string name() const override;
  void reset(std::uint64_t seed) override;
  std::vector<Action> decide(std::span<const DecisionContext> contexts) override;

 private:
  SimConfig cfg_;
  double epsilon_;
  std::uint64_t seed_ = 0;
  std::map<std::uint64_t, Rng> rngs_;
};

struct UserMetrics {
  std::uint64_t user_id = 0;
  std::size_t steps = 0;
  std::size_t sessions = 0;
  std::size_t push_sends = 0;
  std::size_t badge_sends = 0;
  std::size_t clicks = 0;
  std::size_t eligible_push_steps = 0;
  std::vector<double> returns;  // undiscounted per-component reward sums

  std::size_t sends() const { return push_sends + badge_sends; }
};

struct MetricsReport {
  std::string policy;
  std::size_t users = 0;
  std::size_t decision_steps = 0;
  std::size_t sessions = 0;
  std::size_t volume = 0;
  std::size_t push_sends = 0;
  std::size_t badge_sends = 0;
  std::size_t clicks = 0;
  std::size_t eligible_push_steps = 0;
  double ctr = 0;          // clicks / volume
  bool zero_send = false;  // volume == 0, ctr reported as 0
  std::vector<double> returns;
  std::vector<UserMetrics> per_user;

  nlohmann::json to_json(bool include_users = false) const;
};

// Aggregates per-user rows (in the given order) into a report.
MetricsReport summarize(std::string policy, std::vector<UserMetrics> per_user);

// Users are 0..n_users-1 evolved in lockstep. Deterministic given seed and
// a deterministic policy.
MetricsReport rollout(Policy& policy, const SimConfig& cfg, std::size_t n_users, std::size_t n_steps,
                      std::uint64_t seed);

struct Interval {
  double low = 0;
  double high = 0;
};

// Percentile bootstrap over users of sum(num)/sum(den).
Interval bootstrap_ratio(std::span<const UserMetrics> users, double (*num)(const UserMetrics&),
                         double (*den)(const UserMetrics&), std::size_t samples, std::uint64_t seed,
                         double level = 0.95);

struct MetricDelta {
  std::string metric;
  double value_a = 0;
  double value_b = 0;
  double delta_pct = 0;
  Interval ci;
  bool nss = false;
  bool undefined_baseline = false;

  std::string display() const;  // "+1.23% [0.50%, 2.01%]", "NSS" or "undefined baseline"
};

struct ABResult {
  std::string policy_a;
  std::string policy_b;
  std::vector<MetricDelta> deltas;  // sessions, volume, ctr
  MetricsReport report_a;
  MetricsReport report_b;

  nlohmann::json to_json() const;
};

struct ABOptions {
  std::size_t n_users = 200;
  std::size_t n_steps = 96;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t bootstrap_samples = 1000;
  std::uint64_t bootstrap_seed = 7;
};

// Paired comparison: both arms see the same environment seeds; deltas are
// (a - b) / b in percent with a paired user-level percentile bootstrap.
ABResult ab_compare(Policy& policy_a, Policy& policy_b, const SimConfig& cfg, const ABOptions& options);

// Percentage delta and paired bootstrap interval for one ratio metric.
MetricDelta paired_delta(std::string metric, std::span<const UserMetrics> a, std::span<const UserMetrics> b,
                         double (*num)(const UserMetrics&), double (*den)(const UserMetrics&),
                         std::size_t samples, std::uint64_t seed);

}  // namespace notifdt::sim
