#include "notifdt/core/types.hpp"

#include "notifdt/common/errors.hpp"

namespace notifdt {

std::string_view action_name(Action a) {
  switch (a) {
    case Action::kSendBadge: return "SendBadge";
    case Action::kSendPush: return "SendPush";
    case Action::kDontSend: return "DontSend";
  }
  return "?";
}

Action parse_action(std::string_view name) {
  for (std::size_t i = 0; i < kNumActions; ++i) {
    if (action_name(action_from_index(i)) == name) return action_from_index(i);
  }
  throw ContractError("unknown action '" + std::string(name) + "'");
}

std::string_view reward_name(std::size_t component) {
  switch (component) {
    case kRewardClick: return "click";
    case kRewardVisit: return "visit";
    case kRewardVolume: return "volume";
    default: return "reward";
  }
}

std::vector<Action> EligibleActionSet::actions() const {
  std::vector<Action> out;
  for (std::size_t i = 0; i < kNumActions; ++i) {
    if (contains(action_from_index(i))) out.push_back(action_from_index(i));
  }
  return out;
}

std::array<double, kNumActions> EligibleActionSet::multi_hot() const {
  std::array<double, kNumActions> v{};
  for (std::size_t i = 0; i < kNumActions; ++i) v[i] = contains(action_from_index(i)) ? 1.0 : 0.0;
  return v;
}

std::string to_string(EligibleActionSet eas) {
  std::string s = "{";
  bool first = true;
  for (Action a : eas.actions()) {
    if (!first) s += ",";
    s += action_name(a);
    first = false;
  }
  return s + "}";
}

void InteractionLog::validate() const {
  for (const auto& user : users) {
    for (std::size_t i = 0; i < user.steps.size(); ++i) {
      const auto& st = user.steps[i];
      if (i > 0 && st.timestamp_ms <= user.steps[i - 1].timestamp_ms) {
        throw FormatError("user " + std::to_string(user.user_id) + ": timestamps not increasing at step " +
                          std::to_string(i));
      }
      if (st.reward.size() != reward_dim) {
        throw FormatError("user " + std::to_string(user.user_id) + ": reward width " +
                          std::to_string(st.reward.size()) + " != " + std::to_string(reward_dim));
      }
      if (st.state.size() != state_dim) {
        throw FormatError("user " + std::to_string(user.user_id) + ": state width " +
                          std::to_string(st.state.size()) + " != " + std::to_string(state_dim));
      }
    }
  }
}

}  // namespace notifdt
