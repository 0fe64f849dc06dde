#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "notifdt/diffcore/optimizer.hpp"
#include "notifdt/dtmodel/policy.hpp"

namespace notifdt::model {

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::size_t warmup_steps = 50;
  // Cosine decay from learning_rate to learning_rate * final_lr_ratio.
  double final_lr_ratio = 0.1;
  double clip_norm = 1.0;
  // 0 means no cap; otherwise training stops after this many updates.
  std::size_t max_steps = 0;
  std::uint64_t seed = 0;
  bool fit_normalizer = true;
  // Parameter-name prefixes left trainable; empty trains everything.
  std::vector<std::string> trainable_prefixes;
  // Percentile of training RTG labels stored as the constant prompt.
  double cohort_quantile = 0.7;
};

struct EvalMetrics {
  // Over every real context step of every window.
  double action_accuracy = 0;
  // Over the last context step of each window only: the position a served
  // decision occupies, with all available history in context.
  double decision_accuracy = 0;
  double pinball_loss = 0;  // mean over real steps, rewards and grid levels
  double loss_action = 0;   // per trajectory
  double loss_rtg = 0;      // per trajectory
  double loss_total = 0;
  std::size_t steps = 0;
  std::size_t decisions = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;  // mean over updates in the epoch
  EvalMetrics eval;       // on the validation set, or the train set if none
};

nlohmann::json to_json(const EpochMetrics& m);
nlohmann::json to_json(const EvalMetrics& m);

// Teacher-forced evaluation: logged RTG labels fill the R tokens.
EvalMetrics evaluate(const DecisionTransformer<float>& net, std::span<const TrajectoryWindow> windows,
                     std::size_t batch_size = 256);
EvalMetrics evaluate(const PolicyModel& model, std::span<const TrajectoryWindow> windows,
                     std::size_t batch_size = 256);

// Type-7 (linear interpolation) empirical quantile of each reward's RTG
// labels over real context steps.
std::vector<double> rtg_percentile(std::span<const TrajectoryWindow> windows, std::size_t reward_dim, double q);

// Step-level driver used by train() and by tests that need direct control.
class Trainer {
 public:
  Trainer(DecisionTransformer<float>& net, const TrainOptions& options, std::size_t total_steps);

  // One Adam update on the batch; returns the pre-update loss. Throws
  // NumericError when the loss or gradients are not finite.
  double step(const ModelBatch& batch);
  double current_learning_rate() const;
  std::size_t steps_taken() const { return adam_.steps_taken(); }

 private:
  DecisionTransformer<float>& net_;
  TrainOptions options_;
  std::size_t total_steps_;
  diff::Adam<float> adam_;
};

struct TrainResult {
  PolicyModel model;
  std::vector<EpochMetrics> history;
};

// Throws ContractError on an empty training set.
TrainResult train(std::span<const TrajectoryWindow> train_set, std::span<const TrajectoryWindow> validation,
                  const DTConfig& cfg, const TrainOptions& options,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

}  // namespace notifdt::model
