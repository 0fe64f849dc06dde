#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "notifdt/core/types.hpp"
#include "notifdt/dtmodel/policy.hpp"
#include "notifdt/seqstore/store.hpp"

namespace notifdt::svc {

enum class PromptMode : std::uint8_t { kLearned = 0, kConstant = 1, kManual = 2 };

std::string_view prompt_mode_name(PromptMode m);
PromptMode parse_prompt_mode(std::string_view name);  // ContractError on unknown names

struct PromptSpec {
  // Target quantile level per reward; used by learned mode.
  std::vector<double> alphas;
  // Constant mode: the fixed prompt. Manual mode: the initial prompt R'_1.
  // Falls back to the checkpoint's cohort prompt when absent.
  std::optional<std::vector<double>> rtg_override;
};

struct DecisionRequest {
  std::uint64_t user_id = 0;
  std::vector<double> state;
  EligibleActionSet eas;
  double quality = 0;
  std::int64_t timestamp_ms = 0;
  PromptMode mode = PromptMode::kLearned;
  PromptSpec prompt;
  // Upstream reward estimates per action, stored as the new record's reward
  // until realized values arrive. Empty entries count as zeros.
  std::array<std::vector<double>, kNumActions> predicted_rewards;
  // When set the action is sampled from the masked distribution instead of
  // taking the argmax.
  std::optional<std::uint64_t> sample_seed;
};

struct DecisionResponse {
  std::uint64_t user_id = 0;
  Action action = Action::kDontSend;
  std::array<double, kNumActions> probabilities{};
  std::vector<double> prompt;
  model::QuantileMatrix quantiles;  // rows sorted ascending
  std::size_t history_length = 0;
  std::size_t quantile_crossings = 0;
  bool write_failed = false;
  std::string write_error;
};

struct ServiceOptions {
  std::size_t capacity = store::kDefaultCapacity;
  // Model-version key written with every record; history from other keys is
  // ignored. kIgnoreAllKey disables history entirely.
  std::string model_key = "default";
  std::size_t lock_stripes = 64;
  std::size_t latency_window = 8192;
};

struct ServiceMetrics {
  std::uint64_t decisions = 0;
  std::uint64_t rejected = 0;
  std::uint64_t write_failures = 0;
  std::uint64_t crossing_rows = 0;
  std::uint64_t ingested = 0;
  double latency_p50_ms = 0;
  double latency_p99_ms = 0;
  std::size_t store_users = 0;
  std::size_t store_records = 0;
  std::size_t store_max_occupancy = 0;

  // Prometheus-style exposition text.
  std::string to_text() const;
};

// Stored layout of one decision record.
//   floats: state | prompt | reward_now | prev_realized
//   longs:  action, eas mask, reward_now realized mask, prev_realized mask,
//           history length, prompt mode
//   strings: model key, prompt mode name
struct RecordLayout {
  std::size_t state_dim = 0;
  std::size_t reward_dim = 0;

  std::size_t float_count() const { return state_dim + 3 * reward_dim; }
  static constexpr std::size_t kLongCount = 6;
};

// Nearline decision path: read the user's sequence, predict return
// quantiles, derive the prompt, choose an eligible action and write the new
// record back. Calls for the same user are serialized; different users run
// concurrently.
class DecisionService {
 public:
  DecisionService(std::shared_ptr<const model::PolicyModel> model, store::SequenceStore store,
                  ServiceOptions options = {});
  DecisionService(std::shared_ptr<const model::PolicyModel> model, ServiceOptions options = {});

  const model::PolicyModel& model() const { return *model_; }
  const ServiceOptions& options() const { return options_; }
  store::SequenceStore& store() { return store_; }
  const store::SequenceStore& store() const { return store_; }

  // Throws ContractError or ShapeError for invalid requests, in which case
  // nothing is written. A failed store write is reported in the response.
  DecisionResponse decide(const DecisionRequest& request);

  // All requests are validated before any work. Model passes are batched;
  // repeated users are handled in arrival order.
  std::vector<DecisionResponse> decide_batch(std::span<const DecisionRequest> requests);

  // Sums reward components into the user's pending buffer; the next record
  // written for the user carries them.
  void ingest_external_reward(std::uint64_t user, std::span<const double> values, std::uint8_t mask);

  // Reconstructed history as the model would see it for the next decision.
  std::vector<model::ContextStep> history(std::uint64_t user) const;

  ServiceMetrics metrics() const;

  void validate(const DecisionRequest& request) const;

 private:
  struct Prepared;
  void prepare(const DecisionRequest& request, Prepared& p) const;
  void finish(const DecisionRequest& request, Prepared& p, DecisionResponse& response);
  std::vector<std::size_t> lock_order(std::span<const DecisionRequest* const> wave) const;
  void record_latency(double ms);

  std::shared_ptr<const model::PolicyModel> model_;
  store::SequenceStore store_;
  ServiceOptions options_;
  RecordLayout layout_;
  std::unique_ptr<std::mutex[]> stripes_;

  std::atomic<std::uint64_t> decisions_{0}, rejected_{0}, write_failures_{0}, crossing_rows_{0}, ingested_{0};
  mutable std::mutex latency_mutex_;
  std::vector<double> latencies_;
  std::size_t latency_next_ = 0;
};

nlohmann::json to_json(const DecisionRequest& r);
DecisionRequest request_from_json(const nlohmann::json& j);  // ContractError on schema violations
nlohmann::json to_json(const DecisionResponse& r);

}  // namespace notifdt::svc
