#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "notifdt/core/types.hpp"

namespace notifdt::pipeline {

// R_t = sum_{l=0}^{H} gamma^l r_{t+l}, componentwise. Throws ContractError
// when steps t..t+H are not all present.
std::vector<double> compute_rtg(std::span<const std::vector<double>> rewards, std::size_t t, std::size_t horizon,
                                double gamma);
std::vector<double> compute_rtg(const UserLog& log, std::size_t t, std::size_t horizon, double gamma);

struct SegmentOptions {
  std::size_t context_length = 4;  // T
  std::size_t horizon = 8;         // H
  double gamma = 0.99;
  std::size_t stride = 1;
  // Logs with H < L < T+H yield one left-padded window.
  bool pad_short = true;
  // Additionally emit left-padded windows ending at each of the first T-1
  // labelable steps, so that short serving histories are seen in training.
  bool warmup_windows = false;
};

// Windows of one user in start-index order. Each window holds T context
// steps (leading pads allowed) followed by H horizon steps. The last H log
// steps are never context steps.
std::vector<TrajectoryWindow> segment(const UserLog& log, const SegmentOptions& opt);
// All users; output sorted by (user id, start index).
std::vector<TrajectoryWindow> segment(const InteractionLog& log, const SegmentOptions& opt);

struct UserSplit {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> validation;
  std::vector<std::string> warnings;
};

// Seeded user-level partition; round(ratio * n) users go to train. Throws
// ContractError on an empty list or ratio outside (0, 1).
UserSplit split_users(std::vector<std::uint64_t> user_ids, double ratio, std::uint64_t seed);

// Windows whose user is in `users` (which need not be sorted).
std::vector<TrajectoryWindow> select_users(std::span<const TrajectoryWindow> windows,
                                           std::span<const std::uint64_t> users);

// Sequential prompt after observing rewards r_1..r_t: R'_1 - sum_i r_i.
std::vector<double> manual_prompt(std::span<const double> initial, std::span<const std::vector<double>> observed);

struct DatasetHeader {
  std::uint32_t reward_dim = 0;
  std::uint32_t context_length = 0;
  std::uint32_t horizon = 0;
  std::uint32_t state_dim = 0;
  double gamma = 0;
  std::uint64_t count = 0;

  friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<TrajectoryWindow> windows;
};

inline constexpr std::uint32_t kDatasetVersion = 1;

// Throws ShapeError when a window disagrees with the header dimensions.
void write_dataset(const std::filesystem::path& path, std::span<const TrajectoryWindow> windows,
                   const DatasetHeader& header);
Dataset read_dataset(const std::filesystem::path& path);
// As above, but rejects a header whose n_r, T, H, state width or gamma
// differ from `expect` (count is not compared).
Dataset read_dataset(const std::filesystem::path& path, const DatasetHeader& expect);

// Simulator log export: line-oriented text with a versioned header.
void write_log_export(const std::filesystem::path& path, const InteractionLog& log);
std::string format_log_export(const InteractionLog& log);
InteractionLog read_log_export(const std::filesystem::path& path);
InteractionLog parse_log_export(const std::string& text);

}  // namespace notifdt::pipeline
