#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "notifdt/decisionsvc/service.hpp"
#include "notifdt/dtmodel/config.hpp"
#include "notifdt/dtmodel/trainer.hpp"
#include "notifdt/notifsim/simulator.hpp"
#include "notifdt/pipeline/pipeline.hpp"

namespace notifdt::cli {

struct SimulatorBlock {
  sim::SimConfig params;
  std::size_t users = 300;
  std::size_t steps = 96;
  double epsilon = 0.05;
  std::uint64_t seed = 1;
};

struct PipelineBlock {
  pipeline::SegmentOptions segment;
  double train_ratio = 0.7;
  std::uint64_t split_seed = 1;
};

struct ServingBlock {
  std::size_t capacity = 16;
  double ttl_days = 30;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string model_key = "default";
  svc::PromptMode mode = svc::PromptMode::kLearned;
  std::vector<double> alphas{0.5, 0.5, 0.5};
  std::optional<std::vector<double>> rtg_override;
  bool sample = false;
  std::size_t bench_decisions = 2000;
  std::size_t bench_users = 100;
};

struct EvaluationBlock {
  std::vector<std::vector<double>> sweep_alphas{{0.5, 0.5, 0.5}, {0.75, 0.5, 0.5}, {0.95, 0.5, 0.5}};
  std::size_t users = 200;
  std::size_t steps = 96;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t bootstrap_samples = 1000;
  std::uint64_t bootstrap_seed = 7;
  bool sweep_sample = false;
  // A/B baseline arm: "behavior", "always-dont-send" or "always-push".
  std::string ab_baseline = "behavior";
  double ab_baseline_epsilon = 0.05;
};

struct RunConfig {
  std::string run_dir = "runs/default";
  SimulatorBlock simulator;
  PipelineBlock pipeline;
  model::DTConfig model;
  model::TrainOptions training;
  ServingBlock serving;
  EvaluationBlock evaluation;

  // Cross-block checks; throws ConfigError.
  void validate() const;
};

// Unknown blocks or keys are rejected with ConfigError. Keys the model
// block shares with other blocks (T, H, gamma, n_r, state_dim) may be
// omitted there and are then taken from the pipeline and simulator.
RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

// Applies "block.key=value" (or "run_dir=value"); the value is read as JSON
// when it parses, else as a string.
void apply_override(nlohmann::json& j, std::string_view assignment);

// Throws ConfigError when the file is missing or not JSON.
nlohmann::json read_config_file(const std::filesystem::path& path);

// Standard locations under the run directory.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path checkpoints() const { return root / "checkpoints"; }
  std::filesystem::path datasets() const { return root / "datasets"; }
  std::filesystem::path logs() const { return root / "logs"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path store() const { return root / "store"; }

  std::filesystem::path log_export() const { return logs() / "interactions.csv"; }
  std::filesystem::path train_set() const { return datasets() / "train.ndtd"; }
  std::filesystem::path validation_set() const { return datasets() / "validation.ndtd"; }
  std::filesystem::path checkpoint() const { return checkpoints() / "model.ckpt"; }
  std::filesystem::path snapshot() const { return store() / "snapshot.ndts"; }
  std::filesystem::path resolved_config() const { return root / "config.resolved.json"; }

  void create() const;
};

}  // namespace notifdt::cli
