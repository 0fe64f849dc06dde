#include "notifdt/dtmodel/config.hpp"

#include <set>

#include "notifdt/common/errors.hpp"

namespace notifdt::model {

std::string to_string(ActionHeadMode mode) {
  return mode == ActionHeadMode::kReturnOnly ? "R" : "s+R";
}

ActionHeadMode parse_action_head_mode(const std::string& s) {
  if (s == "R" || s == "R-only") return ActionHeadMode::kReturnOnly;
  if (s == "s+R") return ActionHeadMode::kStateAndReturn;
  throw ConfigError("action_head must be \"R\" or \"s+R\", got \"" + s + "\"");
}

void DTConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (context_length == 0) fail("context_length must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 1.0)) fail("gamma must lie in [0,1]");
  if (!(rtg_weight >= 0.0)) fail("rtg_weight must be >= 0");
  if (reward_dim == 0) fail("reward_dim must be >= 1");
  if (state_dim == 0) fail("state_dim must be >= 1");
  if (quantile_grid.empty()) fail("quantile_grid must be nonempty");
  for (std::size_t j = 0; j < quantile_grid.size(); ++j) {
    const double a = quantile_grid[j];
    if (!(a > 0.0 && a < 1.0)) fail("quantile levels must lie in (0,1)");
    if (j > 0 && !(a > quantile_grid[j - 1])) fail("quantile_grid must be strictly increasing");
  }
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || mlp_hidden == 0 || quantile_hidden == 0 || gate_width == 0) {
    fail("dimensions must be positive");
  }
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
}

nlohmann::json to_json(const DTConfig& c) {
  return nlohmann::json{{"T", c.context_length},
                        {"H", c.horizon},
                        {"gamma", c.gamma},
                        {"lambda", c.rtg_weight},
                        {"n_r", c.reward_dim},
                        {"grid", c.quantile_grid},
                        {"state_dim", c.state_dim},
                        {"d_model", c.d_model},
                        {"n_heads", c.n_heads},
                        {"n_layers", c.n_layers},
                        {"mlp_hidden", c.mlp_hidden},
                        {"quantile_hidden", c.quantile_hidden},
                        {"gate_width", c.gate_width},
                        {"action_head", to_string(c.action_head)},
                        {"seed", c.seed}};
}

DTConfig dt_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"T",        "H",        "gamma",      "lambda",          "n_r",
                                           "grid",     "state_dim", "d_model",   "n_heads",         "n_layers",
                                           "mlp_hidden", "quantile_hidden", "gate_width", "action_head", "seed"};
  if (!j.is_object()) throw ConfigError("model config must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.contains(key)) throw ConfigError("model config: unknown key '" + key + "'");
  }
  DTConfig c;
  try {
    if (j.contains("T")) c.context_length = j.at("T").get<std::size_t>();
    if (j.contains("H")) c.horizon = j.at("H").get<std::size_t>();
    if (j.contains("gamma")) c.gamma = j.at("gamma").get<double>();
    if (j.contains("lambda")) c.rtg_weight = j.at("lambda").get<double>();
    if (j.contains("n_r")) c.reward_dim = j.at("n_r").get<std::size_t>();
    if (j.contains("grid")) c.quantile_grid = j.at("grid").get<std::vector<double>>();
    if (j.contains("state_dim")) c.state_dim = j.at("state_dim").get<std::size_t>();
    if (j.contains("d_model")) c.d_model = j.at("d_model").get<std::size_t>();
    if (j.contains("n_heads")) c.n_heads = j.at("n_heads").get<std::size_t>();
    if (j.contains("n_layers")) c.n_layers = j.at("n_layers").get<std::size_t>();
    if (j.contains("mlp_hidden")) c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    if (j.contains("quantile_hidden")) c.quantile_hidden = j.at("quantile_hidden").get<std::size_t>();
    if (j.contains("gate_width")) c.gate_width = j.at("gate_width").get<std::size_t>();
    if (j.contains("action_head")) c.action_head = parse_action_head_mode(j.at("action_head").get<std::string>());
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace notifdt::model
