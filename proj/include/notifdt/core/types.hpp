#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace notifdt {

inline constexpr std::size_t kNumActions = 3;

enum class Action : std::uint8_t { kSendBadge = 0, kSendPush = 1, kDontSend = 2 };

std::string_view action_name(Action a);
Action parse_action(std::string_view name);  // throws ContractError on unknown names

inline constexpr std::size_t action_index(Action a) { return static_cast<std::size_t>(a); }
inline constexpr Action action_from_index(std::size_t i) { return static_cast<Action>(i); }
inline constexpr bool is_send(Action a) { return a != Action::kDontSend; }

// Reward components produced by the simulator, in vector order.
inline constexpr std::size_t kRewardClick = 0;
inline constexpr std::size_t kRewardVisit = 1;
inline constexpr std::size_t kRewardVolume = 2;
inline constexpr std::size_t kDefaultRewardCount = 3;

std::string_view reward_name(std::size_t component);

// Subset of {SendBadge, SendPush, DontSend}, stored as a bitmask indexed by
// action_index(). Emptiness is representable so callers can reject it.
class EligibleActionSet {
 public:
  constexpr EligibleActionSet() = default;
  constexpr explicit EligibleActionSet(std::uint8_t mask) : mask_(mask & 0x7u) {}
  EligibleActionSet(std::initializer_list<Action> actions) {
    for (Action a : actions) insert(a);
  }

  static constexpr EligibleActionSet all() { return EligibleActionSet(0x7u); }

  constexpr bool contains(Action a) const { return (mask_ >> action_index(a)) & 1u; }
  constexpr void insert(Action a) { mask_ |= static_cast<std::uint8_t>(1u << action_index(a)); }
  constexpr void erase(Action a) { mask_ &= static_cast<std::uint8_t>(~(1u << action_index(a))); }
  constexpr bool empty() const { return mask_ == 0; }
  constexpr std::size_t size() const {
    return ((mask_ >> 0) & 1u) + ((mask_ >> 1) & 1u) + ((mask_ >> 2) & 1u);
  }
  constexpr std::uint8_t mask() const { return mask_; }
  std::vector<Action> actions() const;
  std::array<double, kNumActions> multi_hot() const;

  friend constexpr bool operator==(EligibleActionSet, EligibleActionSet) = default;

 private:
  std::uint8_t mask_ = 0;
};

std::string to_string(EligibleActionSet eas);

// One decision step of a user's interaction log.
struct LoggedStep {
  std::int64_t timestamp_ms = 0;
  std::vector<double> state;
  EligibleActionSet eas;
  Action action = Action::kDontSend;
  std::vector<double> reward;
  // Bit i set when reward component i is realized (not a predicted proxy).
  std::uint8_t realized = 0;
  // Behavior policy took its exploration branch on this step.
  bool explored = false;

  friend bool operator==(const LoggedStep&, const LoggedStep&) = default;
};

struct UserLog {
  std::uint64_t user_id = 0;
  std::vector<LoggedStep> steps;

  friend bool operator==(const UserLog&, const UserLog&) = default;
};

struct InteractionLog {
  std::size_t reward_dim = kDefaultRewardCount;
  std::size_t state_dim = 0;
  std::vector<UserLog> users;

  // Throws FormatError if per-user timestamps are not strictly increasing or
  // vector widths disagree with the declared dimensions.
  void validate() const;

  friend bool operator==(const InteractionLog&, const InteractionLog&) = default;
};

struct WindowStep {
  bool pad = false;
  LoggedStep step;
  // Discounted return-to-go label; filled for context steps only.
  std::vector<double> rtg;

  friend bool operator==(const WindowStep&, const WindowStep&) = default;
};

// T context steps followed by H horizon steps. Padded steps (left side only)
// carry pad = true and zero payloads.
struct TrajectoryWindow {
  std::uint64_t user_id = 0;
  // Log index of the first real step.
  std::int64_t start_index = 0;
  std::size_t context_length = 0;
  std::size_t horizon = 0;
  std::size_t pad_steps = 0;
  std::vector<WindowStep> steps;

  std::size_t real_context_steps() const { return context_length - pad_steps; }

  friend bool operator==(const TrajectoryWindow&, const TrajectoryWindow&) = default;
};

}  // namespace notifdt
