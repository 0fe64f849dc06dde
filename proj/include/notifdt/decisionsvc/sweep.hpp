#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "notifdt/decisionsvc/service.hpp"
#include "notifdt/notifsim/rollout.hpp"

namespace notifdt::svc {

struct ServicePolicyOptions {
  PromptMode mode = PromptMode::kLearned;
  PromptSpec prompt;
  ServiceOptions service;
  // Sample actions from the masked distribution (seeded per user and tick)
  // instead of taking the argmax.
  bool sample = false;
  std::string label;
};

// Runs the full decision service inside simulator rollouts. Every reset
// starts from an empty store; realized rewards from the simulator are
// ingested as external rewards.
class ServicePolicy final : public sim::Policy {
 public:
  ServicePolicy(std::shared_ptr<const model::PolicyModel> model, ServicePolicyOptions options);

  std::string name() const override;
  void reset(std::uint64_t seed) override;
  std::vector<Action> decide(std::span<const sim::DecisionContext> contexts) override;
  void observe(std::span<const sim::Feedback> feedback) override;

  // Prompts used since the last reset, one per decision.
  const std::vector<std::vector<double>>& prompts() const { return prompts_; }
  DecisionService& service();

 private:
  std::shared_ptr<const model::PolicyModel> model_;
  ServicePolicyOptions options_;
  std::uint64_t seed_ = 0;
  std::unique_ptr<DecisionService> service_;
  std::vector<std::vector<double>> prompts_;
};

struct PromptStats {
  double mean = 0;
  double sd = 0;
  double p10 = 0;
  double p50 = 0;
  double p90 = 0;
  std::size_t count = 0;
};

PromptStats summarize_prompts(std::span<const double> values);

struct SweepOptions {
  std::size_t n_users = 200;
  std::size_t n_steps = 96;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t bootstrap_samples = 1000;
  std::uint64_t bootstrap_seed = 7;
  ServiceOptions service;
  bool sample = false;
};

struct SweepRow {
  std::vector<double> alphas;
  std::vector<PromptStats> prompts;  // per reward component
  sim::MetricsReport report;         // users pooled over seeds
  sim::Interval ctr_ci;
};

struct SweepTable {
  std::vector<SweepRow> rows;

  // One line per setting; header names every column.
  std::string to_csv() const;
  nlohmann::json to_json() const;
};

// Every alpha setting is rolled out on the same environment seeds, so rows
// are paired comparisons.
SweepTable prompt_sweep(std::shared_ptr<const model::PolicyModel> model,
                        std::span<const std::vector<double>> alpha_settings, const sim::SimConfig& cfg,
                        const SweepOptions& options);

}  // namespace notifdt::svc
