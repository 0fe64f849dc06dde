#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "json.hpp"
#include "notifdt/dtmodel/model.hpp"

namespace notifdt::model {

// One completed step of a user's history as seen at inference time.
struct ContextStep {
  std::vector<double> state;
  std::vector<double> rtg;  // prompt that was used when the step was decided
  EligibleActionSet eas;
  Action action = Action::kDontSend;
  std::vector<double> reward;
};

// The newest min(T-1, history.size()) steps of history are used; older
// steps are dropped and missing ones are left-padded.
struct InferenceQuery {
  std::span<const ContextStep> history;
  std::vector<double> state;
  EligibleActionSet eas;
};

using ActionLogits = std::array<double, kNumActions>;

// Frozen 32-bit model plus everything needed to serve it: normalizer and
// free-form metadata (cohort prompt, training provenance). Inference is
// const and safe to call concurrently.
class PolicyModel {
 public:
  explicit PolicyModel(DecisionTransformer<float> net, nlohmann::json metadata = nlohmann::json::object());

  const DTConfig& config() const { return net_.config(); }
  const DecisionTransformer<float>& network() const { return net_; }
  DecisionTransformer<float>& network() { return net_; }
  const nlohmann::json& metadata() const { return metadata_; }
  nlohmann::json& metadata() { return metadata_; }

  // Fixed prompt for constant-prompt serving; empty when absent.
  std::vector<double> cohort_prompt() const;

  QuantileMatrix predict_quantiles(const InferenceQuery& q) const;
  std::vector<QuantileMatrix> predict_quantiles(std::span<const InferenceQuery> qs) const;

  // Unmasked logits at the current step given the prompt R_t. Throws
  // ContractError on an empty eligible set.
  ActionLogits action_logits(const InferenceQuery& q, std::span<const double> prompt) const;
  std::vector<ActionLogits> action_logits(std::span<const InferenceQuery> qs,
                                          std::span<const std::vector<double>> prompts) const;

  void save(const std::filesystem::path& path) const;
  static PolicyModel load(const std::filesystem::path& path);

 private:
  ModelBatch query_batch(std::span<const InferenceQuery> qs, std::span<const std::vector<double>> prompts) const;

  DecisionTransformer<float> net_;
  nlohmann::json metadata_;
};

}  // namespace notifdt::model
