#include "notifdt/decisionsvc/sweep.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "notifdt/common/errors.hpp"
#include "notifdt/common/rng.hpp"

namespace notifdt::svc {

namespace {

std::string num(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double clicks_of(const sim::UserMetrics& m) { return static_cast<double>(m.clicks); }
double sends_of(const sim::UserMetrics& m) { return static_cast<double>(m.sends()); }

// Nearest-rank percentile of sorted data.
double nearest_rank(const std::vector<double>& sorted, double q) {
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(k, 1, sorted.size()) - 1];
}

}  // namespace

ServicePolicy::ServicePolicy(std::shared_ptr<const model::PolicyModel> model, ServicePolicyOptions options)
    : model_(std::move(model)), options_(std::move(options)) {
  if (!model_) throw ContractError("ServicePolicy: no model");
}

std::string ServicePolicy::name() const {
  if (!options_.label.empty()) return options_.label;
  std::string n = "dt-" + std::string(prompt_mode_name(options_.mode));
  if (options_.mode == PromptMode::kLearned) {
    for (double a : options_.prompt.alphas) n += "-" + num(a);
  }
  return n;
}

void ServicePolicy::reset(std::uint64_t seed) {
  seed_ = seed;
  service_ = std::make_unique<DecisionService>(model_, options_.service);
  prompts_.clear();
}

DecisionService& ServicePolicy::service() {
  if (!service_) reset(seed_);
  return *service_;
}

std::vector<Action> ServicePolicy::decide(std::span<const sim::DecisionContext> contexts) {
  DecisionService& svc = service();
  std::vector<DecisionRequest> reqs(contexts.size());
  for (std::size_t i = 0; i < contexts.size(); ++i) {
    const sim::Observation& o = *contexts[i].obs;
    DecisionRequest& r = reqs[i];
    r.user_id = contexts[i].user_id;
    r.state = o.state;
    r.eas = o.eas;
    r.quality = o.quality;
    r.timestamp_ms = o.timestamp_ms;
    r.mode = options_.mode;
    r.prompt = options_.prompt;
    r.predicted_rewards = o.predicted_rewards;
    if (options_.sample) r.sample_seed = derive_seed(seed_, r.user_id, o.tick);
  }
  auto resp = svc.decide_batch(reqs);
  std::vector<Action> actions;
  actions.reserve(resp.size());
  for (auto& r : resp) {
    actions.push_back(r.action);
    prompts_.push_back(std::move(r.prompt));
  }
  return actions;
}

void ServicePolicy::observe(std::span<const sim::Feedback> feedback) {
  DecisionService& svc = service();
  for (const auto& f : feedback) {
    if (f.outcome && f.outcome->realized) svc.ingest_external_reward(f.user_id, f.outcome->reward, f.outcome->realized);
  }
}

PromptStats summarize_prompts(std::span<const double> values) {
  PromptStats s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  s.p10 = nearest_rank(sorted, 0.10);
  s.p50 = nearest_rank(sorted, 0.50);
  s.p90 = nearest_rank(sorted, 0.90);
  return s;
}

SweepTable prompt_sweep(std::shared_ptr<const model::PolicyModel> model,
                        std::span<const std::vector<double>> alpha_settings, const sim::SimConfig& cfg,
                        const SweepOptions& options) {
  if (options.seeds.empty()) throw ContractError("prompt_sweep: no seeds");
  const std::size_t nr = model->config().reward_dim;
  SweepTable table;
  for (const auto& alphas : alpha_settings) {
    ServicePolicyOptions po;
    po.mode = PromptMode::kLearned;
    po.prompt.alphas = alphas;
    po.service = options.service;
    po.sample = options.sample;
    ServicePolicy policy(model, po);
    std::vector<sim::UserMetrics> pooled;
    std::vector<std::vector<double>> per_reward(nr);
    for (std::uint64_t seed : options.seeds) {
      auto rep = sim::rollout(policy, cfg, options.n_users, options.n_steps, seed);
      pooled.insert(pooled.end(), rep.per_user.begin(), rep.per_user.end());
      for (const auto& p : policy.prompts()) {
        for (std::size_t i = 0; i < nr; ++i) per_reward[i].push_back(p[i]);
      }
    }
    SweepRow row;
    row.alphas = alphas;
    for (const auto& v : per_reward) row.prompts.push_back(summarize_prompts(v));
    row.ctr_ci = sim::bootstrap_ratio(pooled, clicks_of, sends_of, options.bootstrap_samples, options.bootstrap_seed);
    row.report = sim::summarize(policy.name(), std::move(pooled));
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string SweepTable::to_csv() const {
  std::ostringstream os;
  const std::size_t nr = rows.empty() ? 0 : rows.front().alphas.size();
  for (std::size_t i = 0; i < nr; ++i) os << "alpha_" << reward_name(i) << ',';
  for (std::size_t i = 0; i < nr; ++i) {
    const auto r = reward_name(i);
    os << "prompt_mean_" << r << ",prompt_sd_" << r << ",prompt_p10_" << r << ",prompt_p50_" << r << ",prompt_p90_"
       << r << ',';
  }
  os << "users,decision_steps,sessions,volume,push_sends,badge_sends,clicks,ctr,ctr_low,ctr_high\n";
  for (const auto& row : rows) {
    for (double a : row.alphas) os << num(a) << ',';
    for (const auto& p : row.prompts) {
      os << num(p.mean) << ',' << num(p.sd) << ',' << num(p.p10) << ',' << num(p.p50) << ',' << num(p.p90) << ',';
    }
    const auto& m = row.report;
    os << m.users << ',' << m.decision_steps << ',' << m.sessions << ',' << m.volume << ',' << m.push_sends << ','
       << m.badge_sends << ',' << m.clicks << ',' << num(m.ctr) << ',' << num(row.ctr_ci.low) << ','
       << num(row.ctr_ci.high) << '\n';
  }
  return os.str();
}

nlohmann::json SweepTable::to_json() const {
  auto arr = nlohmann::json::array();
  for (const auto& row : rows) {
    auto prompts = nlohmann::json::array();
    for (std::size_t i = 0; i < row.prompts.size(); ++i) {
      const auto& p = row.prompts[i];
      prompts.push_back({{"reward", reward_name(i)},
                         {"mean", p.mean},
                         {"sd", p.sd},
                         {"p10", p.p10},
                         {"p50", p.p50},
                         {"p90", p.p90},
                         {"count", p.count}});
    }
    arr.push_back({{"alphas", row.alphas},
                   {"prompts", prompts},
                   {"metrics", row.report.to_json()},
                   {"ctr_ci", {row.ctr_ci.low, row.ctr_ci.high}}});
  }
  return {{"rows", arr}};
}

}  // namespace notifdt::svc
