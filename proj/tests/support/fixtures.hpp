#pragma once

#include <vector>

#include "notifdt/common/rng.hpp"
#include "notifdt/core/types.hpp"
#include "notifdt/dtmodel/config.hpp"

namespace notifdt::testing {

inline EligibleActionSet random_eas(Rng& rng) {
  EligibleActionSet eas{Action::kDontSend};
  if (rng.bernoulli(0.6)) eas.insert(Action::kSendPush);
  if (rng.bernoulli(0.7)) eas.insert(Action::kSendBadge);
  return eas;
}

inline LoggedStep random_step(Rng& rng, std::size_t state_dim, std::size_t reward_dim, std::int64_t ts) {
  LoggedStep s;
  s.timestamp_ms = ts;
  for (std::size_t i = 0; i < state_dim; ++i) s.state.push_back(rng.normal());
  s.eas = random_eas(rng);
  auto acts = s.eas.actions();
  s.action = acts[rng.below(acts.size())];
  for (std::size_t i = 0; i < reward_dim; ++i) s.reward.push_back(rng.normal(0.0, 0.5));
  s.realized = 0x7;
  return s;
}

// Window with `real` real context steps (left-padded to T) plus H horizon
// steps. RTG labels are random; model tests do not need them consistent.
inline TrajectoryWindow random_window(Rng& rng, const model::DTConfig& cfg, std::size_t real) {
  TrajectoryWindow w;
  w.user_id = rng.below(1000);
  w.context_length = cfg.context_length;
  w.horizon = cfg.horizon;
  w.pad_steps = cfg.context_length - real;
  std::int64_t ts = 1'000'000;
  for (std::size_t t = 0; t < cfg.context_length + cfg.horizon; ++t) {
    WindowStep ws;
    ws.pad = t < w.pad_steps;
    if (!ws.pad) {
      ws.step = random_step(rng, cfg.state_dim, cfg.reward_dim, ts);
      ts += 1800000;
      if (t < cfg.context_length)
        for (std::size_t i = 0; i < cfg.reward_dim; ++i) ws.rtg.push_back(rng.normal(1.0, 1.0));
    }
    w.steps.push_back(std::move(ws));
  }
  return w;
}

inline model::DTConfig small_config(std::size_t T = 4, std::size_t d = 16) {
  model::DTConfig cfg;
  cfg.context_length = T;
  cfg.horizon = 2;
  cfg.state_dim = 5;
  cfg.d_model = d;
  cfg.n_heads = 2;
  cfg.n_layers = 2;
  cfg.mlp_hidden = 2 * d;
  cfg.quantile_hidden = d;
  cfg.gate_width = d;
  cfg.seed = 7;
  return cfg;
}

}  // namespace notifdt::testing
