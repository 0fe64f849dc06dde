#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "json.hpp"
#include "notifdt/common/rng.hpp"
#include "notifdt/core/types.hpp"

namespace notifdt::sim {

inline constexpr std::size_t kStateDim = 8;
inline constexpr std::int64_t kMinuteMs = 60'000;

// Observable state feature layout.
enum StateFeature : std::size_t {
  kQuality = 0,
  kRecentPushes = 1,
  kRecentBadges = 2,
  kSinceLastVisit = 3,
  kVisitRate = 4,
  kVisitPropensity = 5,
  kHourSin = 6,
  kHourCos = 7,
};

// Every generator parameter. Per-channel arrays are indexed by action
// index (badge, push, dont-send).
struct SimConfig {
  std::int64_t tick_minutes = 30;
  std::int64_t start_time_ms = 1'700'000'000'000;

  // Population
  double engagement_min = 0.05;
  double engagement_max = 1.0;
  std::size_t n_topics = 4;
  double affinity_sd = 0.5;
  double quality_sd = 1.2;

  // Eligibility of the non-trivial channels per tick.
  double push_eligible_prob = 0.6;
  double badge_eligible_prob = 0.8;

  // Fatigue f' = decay * f + increment[action].
  double fatigue_decay = 0.85;
  std::array<double, 3> fatigue_increment{0.4, 1.0, 0.0};

  // Click logit = bias[ch] + w_quality (q - 0.5) + w_engagement (e - 0.5)
  //               - w_fatigue f.
  std::array<double, 3> click_bias{-1.8, -1.0, 0.0};
  double click_w_quality = 5.0;
  double click_w_engagement = 1.5;
  double click_w_fatigue = 0.6;

  // Organic visit probability per tick = organic_rate * e * exp(-k f).
  double organic_rate = 0.08;
  double organic_fatigue_k = 0.15;

  // Page views per visit = 1 + Poisson(mean), spaced 1..max_gap minutes.
  double views_mean = 2.0;
  double view_gap_max_minutes = 6.0;

  // Reward shaping.
  double click_value_offset = 0.25;       // click reward = p_click - offset for sends
  std::array<double, 3> volume_penalty{0.1, 0.3, 0.0};  // times (1 + fatigue)

  // Behavior heuristic.
  double push_quality_threshold = 0.7;
  double badge_quality_threshold = 0.4;
  std::size_t push_cooldown = 3;  // no push if one was sent in the last N ticks

  std::size_t recent_window_ticks = 24;
  double visit_rate_decay = 0.9;
  double since_visit_scale_ticks = 48.0;

  void validate() const;
  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

nlohmann::json to_json(const SimConfig& cfg);
// Unknown keys are rejected; missing keys keep defaults.
SimConfig sim_config_from_json(const nlohmann::json& j);

// What a policy sees at a decision tick.
struct Observation {
  std::size_t tick = 0;
  std::int64_t timestamp_ms = 0;
  std::vector<double> state;
  EligibleActionSet eas;
  double quality = 0;
  // Predicted reward vector of each action (click value, visit proxy,
  // volume penalty), indexed by action index. These are the proxies a
  // serving system would attach to the request.
  std::array<std::vector<double>, kNumActions> predicted_rewards;
  // Heuristic memory: actions of the most recent ticks, newest last.
  std::vector<Action> recent_actions;
};

struct StepOutcome {
  std::vector<double> reward;        // [click value, visit, volume penalty]
  std::uint8_t realized = 0;         // realized-component mask
  bool clicked = false;
  bool visited = false;              // any visit during the tick
  std::vector<std::int64_t> page_views;
  double fatigue_before = 0;
  double fatigue_after = 0;
};

// Realized mask of the simulator's reward vector: click value is a
// prediction, visit and volume are observed.
inline constexpr std::uint8_t kRealizedMask = (1u << kRewardVisit) | (1u << kRewardVolume);

double sigmoid(double x);

// One user's latent dynamics. Candidate/eligibility draws use a stream
// independent of the actions taken, and per-tick outcome draws are keyed by
// (user, tick), so two policies run on the same seed face the same
// candidates and share random numbers where their actions agree.
class UserSimulator {
 public:
  UserSimulator(const SimConfig& cfg, std::uint64_t user_id, std::uint64_t seed);

  std::uint64_t user_id() const { return user_id_; }
  double engagement() const { return engagement_; }
  double fatigue() const { return fatigue_; }
  void set_engagement(double e) { engagement_ = e; }
  const std::vector<double>& affinity() const { return affinity_; }
  std::size_t tick() const { return tick_; }

  const Observation& observation() const { return obs_; }
  double click_probability(Action a) const;

  // Applies the action for the current tick, samples outcomes and advances
  // to the next tick. Throws ContractError when the action is ineligible.
  StepOutcome step(Action a);

 private:
  void draw_candidate();
  void refresh_observation();
  void add_visit(double start_minute, Rng& rng, std::vector<std::int64_t>& views);

  const SimConfig* cfg_;
  std::uint64_t user_id_;
  std::uint64_t seed_;
  Rng candidate_rng_;
  double engagement_ = 0;
  std::vector<double> affinity_;
  double fatigue_ = 0;
  std::size_t tick_ = 0;
  std::int64_t last_visit_tick_ = -1;
  double visit_rate_ = 0;
  std::deque<Action> recent_;
  double quality_ = 0;
  EligibleActionSet eas_;
  Observation obs_;
};

// Quality-threshold heuristic with push cooldown; deterministic.
Action heuristic_action(const Observation& obs, const SimConfig& cfg);

struct BehaviorChoice {
  Action action = Action::kDontSend;
  bool explored = false;
};

// With probability epsilon a uniform draw over the eligible set, otherwise
// the heuristic. Throws ContractError on an empty set.
BehaviorChoice behavior_policy(const Observation& obs, const SimConfig& cfg, double epsilon, Rng& rng);

// Count of maximal runs of sorted page-view timestamps whose consecutive
// gaps are below 30 minutes.
std::size_t sessions_metric(std::span<const std::int64_t> sorted_timestamps_ms);

// Logged behavior data for offline training.
InteractionLog generate_logs(const SimConfig& cfg, std::size_t n_users, std::size_t n_steps, double epsilon,
                             std::uint64_t seed);

}  // namespace notifdt::sim
