#include "notifdt/dtmodel/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "notifdt/common/errors.hpp"
#include "notifdt/common/rng.hpp"

namespace notifdt::model {

using diff::Graph;
using diff::Shape;
using diff::Tensor;
using diff::Var;

// ---------------------------------------------------------------------------
// batches

ModelBatch make_batch(std::span<const TrajectoryWindow* const> windows, const DTConfig& cfg) {
  const std::size_t T = cfg.context_length, ds = cfg.state_dim, nr = cfg.reward_dim;
  ModelBatch b;
  b.sequences = windows.size();
  b.steps = T;
  const std::size_t n = b.rows();
  b.states.assign(n * ds, 0.0);
  b.returns.assign(n * nr, 0.0);
  b.rewards.assign(n * nr, 0.0);
  b.actions.assign(n, static_cast<std::uint8_t>(Action::kDontSend));
  b.eligible.assign(n, 0);
  b.valid.assign(n, 0);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const TrajectoryWindow& win = *windows[w];
    if (win.context_length != T || win.steps.size() < T) {
      throw ShapeError("window of user " + std::to_string(win.user_id) + " has context length " +
                       std::to_string(win.context_length) + ", model expects " + std::to_string(T));
    }
    for (std::size_t t = 0; t < T; ++t) {
      const WindowStep& ws = win.steps[t];
      if (ws.pad) continue;
      const std::size_t row = w * T + t;
      const LoggedStep& st = ws.step;
      if (st.reward.size() != nr || ws.rtg.size() != nr) {
        throw ShapeError("window of user " + std::to_string(win.user_id) + ": reward dimensionality " +
                         std::to_string(st.reward.size()) + " != n_r " + std::to_string(nr));
      }
      if (st.state.size() != ds) {
        throw ShapeError("window of user " + std::to_string(win.user_id) + ": state dimensionality " +
                         std::to_string(st.state.size()) + " != " + std::to_string(ds));
      }
      std::copy(st.state.begin(), st.state.end(), b.states.begin() + static_cast<std::ptrdiff_t>(row * ds));
      std::copy(ws.rtg.begin(), ws.rtg.end(), b.returns.begin() + static_cast<std::ptrdiff_t>(row * nr));
      std::copy(st.reward.begin(), st.reward.end(), b.rewards.begin() + static_cast<std::ptrdiff_t>(row * nr));
      b.actions[row] = static_cast<std::uint8_t>(action_index(st.action));
      b.eligible[row] = st.eas.mask();
      b.valid[row] = 1;
    }
  }
  return b;
}

ModelBatch make_batch(const TrajectoryWindow& window, const DTConfig& cfg) {
  const TrajectoryWindow* p = &window;
  return make_batch(std::span<const TrajectoryWindow* const>(&p, 1), cfg);
}

// ---------------------------------------------------------------------------
// normalizer

Normalizer Normalizer::identity(const DTConfig& cfg) {
  Normalizer n;
  n.state_mean.assign(cfg.state_dim, 0.0);
  n.state_std.assign(cfg.state_dim, 1.0);
  n.return_mean.assign(cfg.reward_dim, 0.0);
  n.return_std.assign(cfg.reward_dim, 1.0);
  n.reward_mean.assign(cfg.reward_dim, 0.0);
  n.reward_std.assign(cfg.reward_dim, 1.0);
  return n;
}

namespace {

void moments(const std::vector<std::vector<double>>& cols, std::vector<double>& mean, std::vector<double>& sd) {
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto& v = cols[c];
    if (v.empty()) continue;
    double m = 0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - m) * (x - m);
    var /= static_cast<double>(v.size());
    mean[c] = m;
    sd[c] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
}

}  // namespace

Normalizer Normalizer::fit(std::span<const TrajectoryWindow> windows, const DTConfig& cfg) {
  Normalizer n = identity(cfg);
  std::vector<std::vector<double>> s(cfg.state_dim), r(cfg.reward_dim), w(cfg.reward_dim);
  for (const auto& win : windows) {
    for (std::size_t t = 0; t < std::min(win.context_length, win.steps.size()); ++t) {
      const auto& ws = win.steps[t];
      if (ws.pad) continue;
      for (std::size_t i = 0; i < cfg.state_dim && i < ws.step.state.size(); ++i) s[i].push_back(ws.step.state[i]);
      for (std::size_t i = 0; i < cfg.reward_dim && i < ws.rtg.size(); ++i) r[i].push_back(ws.rtg[i]);
      for (std::size_t i = 0; i < cfg.reward_dim && i < ws.step.reward.size(); ++i) w[i].push_back(ws.step.reward[i]);
    }
  }
  moments(s, n.state_mean, n.state_std);
  moments(r, n.return_mean, n.return_std);
  moments(w, n.reward_mean, n.reward_std);
  return n;
}

nlohmann::json Normalizer::to_json() const {
  return {{"state_mean", state_mean},   {"state_std", state_std},   {"return_mean", return_mean},
          {"return_std", return_std},   {"reward_mean", reward_mean}, {"reward_std", reward_std}};
}

Normalizer Normalizer::from_json(const nlohmann::json& j, const DTConfig& cfg) {
  Normalizer n;
  j.at("state_mean").get_to(n.state_mean);
  j.at("state_std").get_to(n.state_std);
  j.at("return_mean").get_to(n.return_mean);
  j.at("return_std").get_to(n.return_std);
  j.at("reward_mean").get_to(n.reward_mean);
  j.at("reward_std").get_to(n.reward_std);
  if (n.state_mean.size() != cfg.state_dim || n.state_std.size() != cfg.state_dim ||
      n.return_mean.size() != cfg.reward_dim || n.return_std.size() != cfg.reward_dim ||
      n.reward_mean.size() != cfg.reward_dim || n.reward_std.size() != cfg.reward_dim) {
    throw FormatError("normalizer dimensions disagree with model config");
  }
  return n;
}

QuantileMatrix QuantileMatrix::from_flat(std::span<const double> flat, std::size_t r, std::size_t m) {
  if (flat.size() != r * m) {
    throw ShapeError("quantile head output of length " + std::to_string(flat.size()) + " cannot reshape to " +
                     std::to_string(r) + "x" + std::to_string(m));
  }
  QuantileMatrix q(r, m);
  std::copy(flat.begin(), flat.end(), q.values.begin());
  return q;
}

// ---------------------------------------------------------------------------
// model

template <typename S>
DecisionTransformer<S>::DecisionTransformer(const DTConfig& cfg) : cfg_(cfg), norm_(Normalizer::identity(cfg)) {
  cfg_.validate();
  Rng rng(derive_seed(cfg_.seed, 0x6d6f64656cULL));
  const std::size_t d = cfg_.d_model, ds = cfg_.state_dim, nr = cfg_.reward_dim;
  auto add_linear = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    params_.add_fan_in(prefix + ".w", {in, out}, in, rng);
    params_.add_constant(prefix + ".b", {out}, S(0));
  };
  auto add_norm = [&](const std::string& prefix) {
    params_.add_constant(prefix + ".g", {d}, S(1));
    params_.add_constant(prefix + ".b", {d}, S(0));
  };
  // Shared trunk first so that both action-head modes draw identical
  // initial values for every shared parameter.
  add_linear("embed.state", ds, d);
  add_linear("embed.rtg", nr, d);
  add_linear("embed.reward", nr, d);
  params_.add_normal("embed.action", {kNumActions, d}, 1.0, rng);
  params_.add_normal("embed.pos", {cfg_.context_length, d}, 0.5, rng);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    add_norm(p + ".ln1");
    add_linear(p + ".attn.q", d, d);
    add_linear(p + ".attn.k", d, d);
    add_linear(p + ".attn.v", d, d);
    add_linear(p + ".attn.o", d, d);
    add_norm(p + ".ln2");
    add_linear(p + ".mlp.fc1", d, cfg_.mlp_hidden);
    add_linear(p + ".mlp.fc2", cfg_.mlp_hidden, d);
  }
  add_norm("final_ln");
  add_linear("head.rtg.fc1", d, cfg_.quantile_hidden);
  add_linear("head.rtg.fc2", cfg_.quantile_hidden, nr * cfg_.levels());
  const std::size_t action_in = cfg_.action_head == ActionHeadMode::kReturnOnly ? d : 2 * d;
  add_linear("head.action.hidden", action_in, cfg_.gate_width);
  add_linear("head.action.eas", kNumActions, cfg_.gate_width);
  add_linear("head.action.out", cfg_.gate_width, kNumActions);
}

template <typename S>
Var DecisionTransformer<S>::linear(Graph<S>& g, Var x, const std::string& prefix) const {
  return g.linear(x, g.param(prefix + ".w"), g.param(prefix + ".b"));
}

template <typename S>
void DecisionTransformer<S>::check_batch(const ModelBatch& b) const {
  const std::size_t n = b.rows();
  if (b.steps != cfg_.context_length) {
    throw ShapeError("batch has " + std::to_string(b.steps) + " steps per sequence, model expects " +
                     std::to_string(cfg_.context_length));
  }
  if (b.states.size() != n * cfg_.state_dim || b.returns.size() != n * cfg_.reward_dim ||
      b.rewards.size() != n * cfg_.reward_dim || b.actions.size() != n || b.eligible.size() != n ||
      b.valid.size() != n) {
    throw ShapeError("batch arrays disagree with " + std::to_string(b.sequences) + "x" + std::to_string(b.steps) +
                     " layout");
  }
}

template <typename S>
Var DecisionTransformer<S>::embed(Graph<S>& g, const ModelBatch& b) const {
  check_batch(b);
  const std::size_t n = b.rows(), ds = cfg_.state_dim, nr = cfg_.reward_dim;
  Tensor<S> states(Shape{n, ds}), returns(Shape{n, nr}), rewards(Shape{n, nr});
  std::vector<std::size_t> action_rows(n), pos_rows(n);
  for (std::size_t r = 0; r < n; ++r) {
    pos_rows[r] = r % b.steps;
    action_rows[r] = b.valid[r] ? b.actions[r] : action_index(Action::kDontSend);
    if (!b.valid[r]) continue;
    for (std::size_t i = 0; i < ds; ++i)
      states.at(r, i) = static_cast<S>((b.states[r * ds + i] - norm_.state_mean[i]) / norm_.state_std[i]);
    for (std::size_t i = 0; i < nr; ++i) {
      returns.at(r, i) = static_cast<S>((b.returns[r * nr + i] - norm_.return_mean[i]) / norm_.return_std[i]);
      rewards.at(r, i) = static_cast<S>((b.rewards[r * nr + i] - norm_.reward_mean[i]) / norm_.reward_std[i]);
    }
  }
  Var pos = g.gather_rows(g.param("embed.pos"), std::move(pos_rows));
  Var es = g.add(linear(g, g.input(std::move(states), "states"), "embed.state"), pos);
  Var er = g.add(linear(g, g.input(std::move(returns), "returns"), "embed.rtg"), pos);
  Var ea = g.add(g.gather_rows(g.param("embed.action"), std::move(action_rows)), pos);
  Var ew = g.add(linear(g, g.input(std::move(rewards), "rewards"), "embed.reward"), pos);
  return g.interleave_rows({es, er, ea, ew});
}

template <typename S>
typename DecisionTransformer<S>::Outputs DecisionTransformer<S>::forward(Graph<S>& g, const ModelBatch& b) const {
  Outputs out;
  out.tokens = embed(g, b);
  const std::size_t n = b.rows(), seq_len = b.steps * kTokensPerStep;
  std::vector<std::uint8_t> key_valid(n * kTokensPerStep);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t k = 0; k < kTokensPerStep; ++k) key_valid[r * kTokensPerStep + k] = b.valid[r];

  Var x = out.tokens;
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l);
    Var h = g.layernorm(x, g.param(p + ".ln1.g"), g.param(p + ".ln1.b"));
    Var att = g.causal_attention(linear(g, h, p + ".attn.q"), linear(g, h, p + ".attn.k"),
                                 linear(g, h, p + ".attn.v"), b.sequences, seq_len, cfg_.n_heads, key_valid);
    x = g.add(x, linear(g, att, p + ".attn.o"));
    Var h2 = g.layernorm(x, g.param(p + ".ln2.g"), g.param(p + ".ln2.b"));
    x = g.add(x, linear(g, g.gelu(linear(g, h2, p + ".mlp.fc1")), p + ".mlp.fc2"));
  }
  out.hidden = g.layernorm(x, g.param("final_ln.g"), g.param("final_ln.b"));

  std::vector<std::size_t> state_rows(n), return_rows(n);
  for (std::size_t r = 0; r < n; ++r) {
    state_rows[r] = r * kTokensPerStep + static_cast<std::size_t>(TokenKind::kState);
    return_rows[r] = r * kTokensPerStep + static_cast<std::size_t>(TokenKind::kReturn);
  }
  Var hs = g.gather_rows(out.hidden, std::move(state_rows));
  Var hr = g.gather_rows(out.hidden, std::move(return_rows));

  const std::size_t nr = cfg_.reward_dim, m = cfg_.levels();
  Var qz = linear(g, g.gelu(linear(g, hs, "head.rtg.fc1")), "head.rtg.fc2");
  Tensor<S> scale(Shape{n, nr * m}), shift(Shape{nr * m});
  for (std::size_t i = 0; i < nr; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      shift.data[i * m + j] = static_cast<S>(norm_.return_mean[i]);
      for (std::size_t r = 0; r < n; ++r) scale.at(r, i * m + j) = static_cast<S>(norm_.return_std[i]);
    }
  }
  out.quantiles = g.add_bias(g.mul(qz, g.input(std::move(scale))), g.input(std::move(shift)));

  Var action_in = cfg_.action_head == ActionHeadMode::kReturnOnly ? hr : g.concat_cols(hs, hr);
  Tensor<S> eas(Shape{n, kNumActions});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t a = 0; a < kNumActions; ++a) eas.at(r, a) = static_cast<S>((b.eligible[r] >> a) & 1u);
  Var gate = g.mul(linear(g, action_in, "head.action.hidden"),
                   linear(g, g.input(std::move(eas), "eas"), "head.action.eas"));
  out.logits = linear(g, gate, "head.action.out");
  return out;
}

template <typename S>
Var DecisionTransformer<S>::action_loss(Graph<S>& g, Var logits, const ModelBatch& b) const {
  std::vector<S> w(b.rows());
  for (std::size_t r = 0; r < b.rows(); ++r) w[r] = b.valid[r] ? S(1) : S(0);
  Var ce = g.masked_cross_entropy(logits, b.actions, b.eligible, std::move(w));
  return g.scale(ce, S(1) / static_cast<S>(std::max<std::size_t>(1, b.sequences)));
}

template <typename S>
Var DecisionTransformer<S>::rtg_loss(Graph<S>& g, Var quantiles, const ModelBatch& b) const {
  const std::size_t n = b.rows(), nr = cfg_.reward_dim;
  Tensor<S> target(Shape{n, nr});
  std::vector<S> w(n);
  for (std::size_t r = 0; r < n; ++r) {
    w[r] = b.valid[r] ? S(1) : S(0);
    for (std::size_t i = 0; i < nr; ++i) target.at(r, i) = static_cast<S>(b.returns[r * nr + i]);
  }
  std::vector<S> alphas(cfg_.quantile_grid.begin(), cfg_.quantile_grid.end());
  Var pin = g.pinball(quantiles, g.input(std::move(target), "rtg_labels"), std::move(alphas), std::move(w));
  return g.scale(pin, S(1) / static_cast<S>(std::max<std::size_t>(1, b.sequences)));
}

template <typename S>
Var DecisionTransformer<S>::total_loss(Graph<S>& g, const Outputs& out, const ModelBatch& b) const {
  Var la = action_loss(g, out.logits, b);
  Var lr = rtg_loss(g, out.quantiles, b);
  return g.add(la, g.scale(lr, static_cast<S>(cfg_.rtg_weight)));
}

template class DecisionTransformer<float>;
template class DecisionTransformer<double>;

// ---------------------------------------------------------------------------

std::vector<double> mask_logits(std::span<const double> logits, EligibleActionSet eas) {
  std::vector<double> out(logits.begin(), logits.end());
  for (std::size_t a = 0; a < out.size(); ++a)
    if (!eas.contains(action_from_index(a))) out[a] = -std::numeric_limits<double>::infinity();
  return out;
}

std::vector<double> masked_softmax(std::span<const double> logits, EligibleActionSet eas) {
  if (eas.empty()) throw ContractError("masked_softmax: empty eligible-action set");
  std::vector<double> p(logits.size(), 0.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < logits.size(); ++a)
    if (eas.contains(action_from_index(a))) mx = std::max(mx, logits[a]);
  double z = 0;
  for (std::size_t a = 0; a < logits.size(); ++a)
    if (eas.contains(action_from_index(a))) z += (p[a] = std::exp(logits[a] - mx));
  for (double& v : p) v /= z;
  return p;
}

Action masked_argmax(std::span<const double> logits, EligibleActionSet eas) {
  if (eas.empty()) throw ContractError("predict_action: empty eligible-action set");
  std::size_t best = kNumActions;
  for (std::size_t a = 0; a < logits.size(); ++a) {
    if (!eas.contains(action_from_index(a))) continue;
    if (best == kNumActions || logits[a] > logits[best]) best = a;
  }
  return action_from_index(best);
}

}  // namespace notifdt::model
