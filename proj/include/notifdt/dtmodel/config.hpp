#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace notifdt::model {

enum class ActionHeadMode { kReturnOnly, kStateAndReturn };

std::string to_string(ActionHeadMode mode);
ActionHeadMode parse_action_head_mode(const std::string& s);

struct DTConfig {
  std::size_t context_length = 4;  // T
  std::size_t horizon = 8;         // H
  double gamma = 0.99;
  double rtg_weight = 1.0;  // lambda in L_action + lambda * L_RTG
  std::size_t reward_dim = 3;
  std::vector<double> quantile_grid{0.25, 0.5, 0.75};
  std::size_t state_dim = 8;
  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t mlp_hidden = 256;
  std::size_t quantile_hidden = 64;
  std::size_t gate_width = 64;
  ActionHeadMode action_head = ActionHeadMode::kReturnOnly;
  std::uint64_t seed = 0;

  std::size_t levels() const { return quantile_grid.size(); }
  // Throws ConfigError on any violated invariant.
  void validate() const;

  friend bool operator==(const DTConfig&, const DTConfig&) = default;
};

nlohmann::json to_json(const DTConfig& cfg);
// Unknown keys are rejected; missing keys keep defaults.
DTConfig dt_config_from_json(const nlohmann::json& j);

}  // namespace notifdt::model
