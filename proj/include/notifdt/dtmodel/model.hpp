#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "notifdt/core/types.hpp"
#include "notifdt/diffcore/graph.hpp"
#include "notifdt/dtmodel/config.hpp"

namespace notifdt::model {

enum class TokenKind : std::uint8_t { kState = 0, kReturn = 1, kAction = 2, kReward = 3 };
inline constexpr std::size_t kTokensPerStep = 4;

// Row of token (sequence b, step t, kind k) in the interleaved token matrix.
inline constexpr std::size_t token_row(std::size_t b, std::size_t t, TokenKind k, std::size_t steps) {
  return (b * steps + t) * kTokensPerStep + static_cast<std::size_t>(k);
}

// B sequences of exactly T steps, flattened step-major. Short sequences are
// left-padded; padded steps have valid == 0 and zero payloads.
struct ModelBatch {
  std::size_t sequences = 0;
  std::size_t steps = 0;
  std::vector<double> states;          // [B*T, state_dim]
  std::vector<double> returns;         // [B*T, n_r]
  std::vector<double> rewards;         // [B*T, n_r]
  std::vector<std::uint8_t> actions;   // [B*T]
  std::vector<std::uint8_t> eligible;  // [B*T] EligibleActionSet masks
  std::vector<std::uint8_t> valid;     // [B*T]

  std::size_t rows() const { return sequences * steps; }
};

// Context steps of the windows become one sequence each. Throws ShapeError
// when a window's reward or state width disagrees with cfg.
ModelBatch make_batch(std::span<const TrajectoryWindow* const> windows, const DTConfig& cfg);
ModelBatch make_batch(const TrajectoryWindow& window, const DTConfig& cfg);

// Per-feature affine standardization applied to model inputs; the quantile
// head predicts in standardized return units and is mapped back.
struct Normalizer {
  std::vector<double> state_mean, state_std;
  std::vector<double> return_mean, return_std;
  std::vector<double> reward_mean, reward_std;

  static Normalizer identity(const DTConfig& cfg);
  static Normalizer fit(std::span<const TrajectoryWindow> windows, const DTConfig& cfg);
  nlohmann::json to_json() const;
  static Normalizer from_json(const nlohmann::json& j, const DTConfig& cfg);

  friend bool operator==(const Normalizer&, const Normalizer&) = default;
};

// n_r x M predicted return-to-go quantiles; entry (i, j) is reward i at
// grid level j.
struct QuantileMatrix {
  std::size_t rewards = 0;
  std::size_t levels = 0;
  std::vector<double> values;

  QuantileMatrix() = default;
  QuantileMatrix(std::size_t r, std::size_t m) : rewards(r), levels(m), values(r * m, 0.0) {}
  // Reshape of the flat head output; throws ShapeError on length mismatch.
  static QuantileMatrix from_flat(std::span<const double> flat, std::size_t r, std::size_t m);

  double& operator()(std::size_t i, std::size_t j) { return values[i * levels + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * levels + j]; }
  std::span<const double> row(std::size_t i) const { return {values.data() + i * levels, levels}; }
};

// Causal transformer over (s, R, a, r) step tokens.
//
// Q_t is read from the final hidden state at the s_t token, which attends
// to the history before t and s_t only. Action logits are read at the R_t
// token (R-only head) or from [h(s_t), h(R_t)] (s+R head), gated
// multiplicatively by a linear embedding of the eligible-action set.
template <typename S>
class DecisionTransformer {
 public:
  explicit DecisionTransformer(const DTConfig& cfg);

  const DTConfig& config() const { return cfg_; }
  diff::ParameterSet<S>& params() { return params_; }
  const diff::ParameterSet<S>& params() const { return params_; }
  Normalizer& normalizer() { return norm_; }
  const Normalizer& normalizer() const { return norm_; }

  struct Outputs {
    diff::Var tokens;      // [B*T*4, d] embedded, pre-trunk
    diff::Var hidden;      // [B*T*4, d] after the trunk
    diff::Var quantiles;   // [B*T, n_r*M] in return units
    diff::Var logits;      // [B*T, 3] before the eligibility mask
  };

  diff::Var embed(diff::Graph<S>& g, const ModelBatch& batch) const;
  Outputs forward(diff::Graph<S>& g, const ModelBatch& batch) const;

  // Trajectory-aggregate losses averaged over the sequences in the batch.
  diff::Var action_loss(diff::Graph<S>& g, diff::Var logits, const ModelBatch& batch) const;
  diff::Var rtg_loss(diff::Graph<S>& g, diff::Var quantiles, const ModelBatch& batch) const;
  diff::Var total_loss(diff::Graph<S>& g, const Outputs& out, const ModelBatch& batch) const;

 private:
  diff::Var linear(diff::Graph<S>& g, diff::Var x, const std::string& prefix) const;
  void check_batch(const ModelBatch& batch) const;

  DTConfig cfg_;
  diff::ParameterSet<S> params_;
  Normalizer norm_;
};

extern template class DecisionTransformer<float>;
extern template class DecisionTransformer<double>;

// Sets ineligible logits to -inf.
std::vector<double> mask_logits(std::span<const double> logits, EligibleActionSet eas);
// Softmax over eligible entries; ineligible entries are exactly 0.
std::vector<double> masked_softmax(std::span<const double> logits, EligibleActionSet eas);
// Highest eligible logit; ties go to the lowest action index. Throws
// ContractError on an empty set.
Action masked_argmax(std::span<const double> logits, EligibleActionSet eas);

}  // namespace notifdt::model
