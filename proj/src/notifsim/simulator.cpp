#include "notifdt/notifsim/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "notifdt/common/errors.hpp"

namespace notifdt::sim {

namespace {

constexpr std::uint64_t kStreamLatent = 1;
constexpr std::uint64_t kStreamCandidate = 2;
constexpr std::uint64_t kStreamOutcome = 3;
constexpr std::uint64_t kStreamBehavior = 4;

}  // namespace

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void SimConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("simulator: " + m); };
  if (tick_minutes <= 0) fail("tick_minutes must be positive");
  if (!(engagement_min >= 0 && engagement_min <= engagement_max && engagement_max <= 1)) {
    fail("engagement range must satisfy 0 <= min <= max <= 1");
  }
  if (n_topics == 0) fail("n_topics must be positive");
  auto prob = [&](double p, const char* name) {
    if (!(p >= 0 && p <= 1)) fail(std::string(name) + " must lie in [0, 1]");
  };
  prob(push_eligible_prob, "push_eligible_prob");
  prob(badge_eligible_prob, "badge_eligible_prob");
  prob(fatigue_decay, "fatigue_decay");
  prob(visit_rate_decay, "visit_rate_decay");
  for (double v : fatigue_increment)
    if (v < 0) fail("fatigue increments must be non-negative");
  if (fatigue_increment[action_index(Action::kDontSend)] != 0) fail("DontSend cannot add fatigue");
  if (volume_penalty[action_index(Action::kDontSend)] != 0) fail("DontSend cannot carry a volume penalty");
  if (organic_rate < 0 || organic_rate * engagement_max > 1) fail("organic_rate out of range");
  if (views_mean < 0 || view_gap_max_minutes < 1) fail("page-view parameters out of range");
  if (recent_window_ticks == 0 || since_visit_scale_ticks <= 0) fail("feature windows must be positive");
}

#define NOTIFDT_SIM_FIELDS(X)                                                                                 \
  X(tick_minutes) X(start_time_ms) X(engagement_min) X(engagement_max) X(n_topics) X(affinity_sd) X(quality_sd) \
  X(push_eligible_prob) X(badge_eligible_prob) X(fatigue_decay) X(fatigue_increment) X(click_bias)             \
  X(click_w_quality) X(click_w_engagement) X(click_w_fatigue) X(organic_rate) X(organic_fatigue_k)              \
  X(views_mean) X(view_gap_max_minutes) X(click_value_offset) X(volume_penalty) X(push_quality_threshold)       \
  X(badge_quality_threshold) X(push_cooldown) X(recent_window_ticks) X(visit_rate_decay)                        \
  X(since_visit_scale_ticks)

nlohmann::json to_json(const SimConfig& cfg) {
  nlohmann::json j;
#define X(f) j[#f] = cfg.f;
  NOTIFDT_SIM_FIELDS(X)
#undef X
  return j;
}

SimConfig sim_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("simulator block must be an object");
  SimConfig cfg;
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      bool known = false;
#define X(f)                 \
  if (k == #f) {             \
    it.value().get_to(cfg.f); \
    known = true;            \
  }
      NOTIFDT_SIM_FIELDS(X)
#undef X
      if (!known) throw ConfigError("simulator: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("simulator: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------

UserSimulator::UserSimulator(const SimConfig& cfg, std::uint64_t user_id, std::uint64_t seed)
    : cfg_(&cfg),
      user_id_(user_id),
      seed_(derive_seed(seed, user_id)),
      candidate_rng_(derive_seed(seed_, kStreamCandidate)) {
  Rng latent(derive_seed(seed_, kStreamLatent));
  engagement_ = latent.uniform(cfg.engagement_min, cfg.engagement_max);
  affinity_.resize(cfg.n_topics);
  for (auto& a : affinity_) a = latent.normal(0.0, cfg.affinity_sd);
  draw_candidate();
}

void UserSimulator::draw_candidate() {
  const std::size_t topic = candidate_rng_.below(cfg_->n_topics);
  quality_ = sigmoid(candidate_rng_.normal(0.0, cfg_->quality_sd) + affinity_[topic]);
  eas_ = EligibleActionSet{Action::kDontSend};
  if (candidate_rng_.bernoulli(cfg_->push_eligible_prob)) eas_.insert(Action::kSendPush);
  if (candidate_rng_.bernoulli(cfg_->badge_eligible_prob)) eas_.insert(Action::kSendBadge);
  refresh_observation();
}

double UserSimulator::click_probability(Action a) const {
  if (!is_send(a)) return 0.0;
  const SimConfig& c = *cfg_;
  return sigmoid(c.click_bias[action_index(a)] + c.click_w_quality * (quality_ - 0.5) +
                 c.click_w_engagement * (engagement_ - 0.5) - c.click_w_fatigue * fatigue_);
}

void UserSimulator::refresh_observation() {
  const SimConfig& c = *cfg_;
  Observation& o = obs_;
  o.tick = tick_;
  o.timestamp_ms = c.start_time_ms + static_cast<std::int64_t>(tick_) * c.tick_minutes * kMinuteMs;
  o.quality = quality_;
  o.eas = eas_;
  std::size_t pushes = 0, badges = 0;
  for (Action a : recent_) {
    pushes += a == Action::kSendPush;
    badges += a == Action::kSendBadge;
  }
  const double since = last_visit_tick_ < 0 ? c.since_visit_scale_ticks
                                            : static_cast<double>(static_cast<std::int64_t>(tick_) - last_visit_tick_);
  const double minutes_of_day =
      std::fmod(static_cast<double>((o.timestamp_ms / kMinuteMs) % (24 * 60)), 24.0 * 60.0);
  const double phase = 2.0 * std::numbers::pi * minutes_of_day / (24.0 * 60.0);
  o.state.assign(kStateDim, 0.0);
  o.state[kQuality] = quality_;
  o.state[kRecentPushes] = static_cast<double>(pushes) / 4.0;
  o.state[kRecentBadges] = static_cast<double>(badges) / 4.0;
  o.state[kSinceLastVisit] = std::min(1.0, since / c.since_visit_scale_ticks);
  o.state[kVisitRate] = visit_rate_;
  o.state[kVisitPropensity] = c.organic_rate * engagement_;
  o.state[kHourSin] = std::sin(phase);
  o.state[kHourCos] = std::cos(phase);

  const std::size_t keep = std::min(recent_.size(), c.push_cooldown);
  o.recent_actions.assign(recent_.end() - static_cast<std::ptrdiff_t>(keep), recent_.end());

  for (std::size_t ai = 0; ai < kNumActions; ++ai) {
    const Action a = action_from_index(ai);
    const double f_after = c.fatigue_decay * fatigue_ + c.fatigue_increment[ai];
    const double p_org = c.organic_rate * engagement_ * std::exp(-c.organic_fatigue_k * f_after);
    const double p_click = click_probability(a);
    auto& r = o.predicted_rewards[ai];
    r.assign(kDefaultRewardCount, 0.0);
    r[kRewardClick] = is_send(a) ? p_click - c.click_value_offset : 0.0;
    r[kRewardVisit] = 1.0 - (1.0 - p_click) * (1.0 - p_org);
    r[kRewardVolume] = -c.volume_penalty[ai] * (1.0 + fatigue_);
  }
}

void UserSimulator::add_visit(double start_minute, Rng& rng, std::vector<std::int64_t>& views) {
  const SimConfig& c = *cfg_;
  const std::int64_t tick_start = obs_.timestamp_ms;
  double minute = start_minute;
  const std::uint32_t n = 1 + rng.poisson(c.views_mean);
  for (std::uint32_t i = 0; i < n; ++i) {
    views.push_back(tick_start + static_cast<std::int64_t>(std::llround(minute * static_cast<double>(kMinuteMs))));
    minute += rng.uniform(1.0, c.view_gap_max_minutes);
  }
}

StepOutcome UserSimulator::step(Action a) {
  if (!eas_.contains(a)) {
    throw ContractError("env_step: action " + std::string(action_name(a)) + " not in eligible set " +
                        to_string(eas_) + " for user " + std::to_string(user_id_));
  }
  const SimConfig& c = *cfg_;
  const std::size_t ai = action_index(a);
  Rng rng(derive_seed(seed_, kStreamOutcome, tick_));
  const double u_click = rng.uniform();
  const double u_organic = rng.uniform();
  const double click_minute = rng.uniform(1.0, 0.6 * static_cast<double>(c.tick_minutes));
  const double organic_minute = rng.uniform(0.0, static_cast<double>(c.tick_minutes));

  StepOutcome out;
  out.fatigue_before = fatigue_;
  const double p_click = click_probability(a);
  out.reward.assign(kDefaultRewardCount, 0.0);
  out.reward[kRewardClick] = is_send(a) ? p_click - c.click_value_offset : 0.0;
  out.reward[kRewardVolume] = -c.volume_penalty[ai] * (1.0 + fatigue_);
  out.realized = kRealizedMask;

  fatigue_ = c.fatigue_decay * fatigue_ + c.fatigue_increment[ai];
  out.fatigue_after = fatigue_;

  out.clicked = is_send(a) && u_click < p_click;
  const double p_org = c.organic_rate * engagement_ * std::exp(-c.organic_fatigue_k * fatigue_);
  const bool organic = u_organic < p_org;
  if (out.clicked) add_visit(click_minute, rng, out.page_views);
  if (organic) add_visit(organic_minute, rng, out.page_views);
  std::sort(out.page_views.begin(), out.page_views.end());
  out.visited = out.clicked || organic;
  out.reward[kRewardVisit] = out.visited ? 1.0 : 0.0;

  if (out.visited) last_visit_tick_ = static_cast<std::int64_t>(tick_);
  visit_rate_ = c.visit_rate_decay * visit_rate_ + (1.0 - c.visit_rate_decay) * (out.visited ? 1.0 : 0.0);
  recent_.push_back(a);
  while (recent_.size() > c.recent_window_ticks) recent_.pop_front();
  ++tick_;
  draw_candidate();
  return out;
}

// ---------------------------------------------------------------------------

Action heuristic_action(const Observation& obs, const SimConfig& cfg) {
  const bool pushed_recently =
      std::find(obs.recent_actions.begin(), obs.recent_actions.end(), Action::kSendPush) != obs.recent_actions.end();
  if (obs.eas.contains(Action::kSendPush) && obs.quality >= cfg.push_quality_threshold && !pushed_recently) {
    return Action::kSendPush;
  }
  if (obs.eas.contains(Action::kSendBadge) && obs.quality >= cfg.badge_quality_threshold) return Action::kSendBadge;
  return Action::kDontSend;
}

BehaviorChoice behavior_policy(const Observation& obs, const SimConfig& cfg, double epsilon, Rng& rng) {
  if (obs.eas.empty()) throw ContractError("behavior_policy: empty eligible-action set");
  // Both draws are always taken so the stream stays aligned across epsilon.
  const double u = rng.uniform();
  const auto acts = obs.eas.actions();
  const Action random_action = acts[rng.below(acts.size())];
  if (u < epsilon) return {random_action, true};
  Action h = heuristic_action(obs, cfg);
  if (!obs.eas.contains(h)) h = acts.front();
  return {h, false};
}

std::size_t sessions_metric(std::span<const std::int64_t> ts) {
  if (ts.empty()) return 0;
  std::size_t sessions = 1;
  for (std::size_t i = 1; i < ts.size(); ++i)
    if (ts[i] - ts[i - 1] >= 30 * kMinuteMs) ++sessions;
  return sessions;
}

InteractionLog generate_logs(const SimConfig& cfg, std::size_t n_users, std::size_t n_steps, double epsilon,
                             std::uint64_t seed) {
  cfg.validate();
  if (n_users == 0 || n_steps == 0) throw ContractError("generate_logs: n_users and n_steps must be at least 1");
  if (!(epsilon >= 0 && epsilon <= 1)) throw ContractError("generate_logs: epsilon must lie in [0, 1]");
  InteractionLog log;
  log.reward_dim = kDefaultRewardCount;
  log.state_dim = kStateDim;
  log.users.reserve(n_users);
  for (std::size_t u = 0; u < n_users; ++u) {
    UserSimulator user(cfg, u, seed);
    Rng behavior(derive_seed(seed, u, kStreamBehavior));
    UserLog ul{u, {}};
    ul.steps.reserve(n_steps);
    for (std::size_t t = 0; t < n_steps; ++t) {
      const Observation& obs = user.observation();
      LoggedStep st;
      st.timestamp_ms = obs.timestamp_ms;
      st.state = obs.state;
      st.eas = obs.eas;
      const BehaviorChoice choice = behavior_policy(obs, cfg, epsilon, behavior);
      st.action = choice.action;
      st.explored = choice.explored;
      StepOutcome out = user.step(choice.action);
      st.reward = std::move(out.reward);
      st.realized = out.realized;
      ul.steps.push_back(std::move(st));
    }
    log.users.push_back(std::move(ul));
  }
  return log;
}

}  // namespace notifdt::sim
