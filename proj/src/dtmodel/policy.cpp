#include "notifdt/dtmodel/policy.hpp"

#include <algorithm>

#include "notifdt/common/errors.hpp"
#include "notifdt/diffcore/checkpoint.hpp"

namespace notifdt::model {

PolicyModel::PolicyModel(DecisionTransformer<float> net, nlohmann::json metadata)
    : net_(std::move(net)), metadata_(std::move(metadata)) {}

std::vector<double> PolicyModel::cohort_prompt() const {
  if (!metadata_.contains("cohort_prompt")) return {};
  return metadata_.at("cohort_prompt").get<std::vector<double>>();
}

ModelBatch PolicyModel::query_batch(std::span<const InferenceQuery> qs,
                                    std::span<const std::vector<double>> prompts) const {
  const DTConfig& cfg = config();
  const std::size_t T = cfg.context_length, ds = cfg.state_dim, nr = cfg.reward_dim;
  ModelBatch b;
  b.sequences = qs.size();
  b.steps = T;
  const std::size_t n = b.rows();
  b.states.assign(n * ds, 0.0);
  b.returns.assign(n * nr, 0.0);
  b.rewards.assign(n * nr, 0.0);
  b.actions.assign(n, static_cast<std::uint8_t>(action_index(Action::kDontSend)));
  b.eligible.assign(n, 0);
  b.valid.assign(n, 0);
  auto put = [&](std::size_t row, std::span<const double> src, std::vector<double>& dst, std::size_t width,
                 const char* what) {
    if (src.size() != width) {
      throw ShapeError(std::string("inference ") + what + " has width " + std::to_string(src.size()) +
                       ", model expects " + std::to_string(width));
    }
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(row * width));
  };
  for (std::size_t s = 0; s < qs.size(); ++s) {
    const InferenceQuery& q = qs[s];
    if (q.eas.empty()) throw ContractError("inference query with empty eligible-action set");
    const std::size_t used = std::min(q.history.size(), T - 1);
    const std::size_t first = q.history.size() - used;
    const std::size_t pad = T - 1 - used;
    for (std::size_t k = 0; k < used; ++k) {
      const ContextStep& st = q.history[first + k];
      const std::size_t row = s * T + pad + k;
      put(row, st.state, b.states, ds, "history state");
      put(row, st.rtg, b.returns, nr, "history prompt");
      put(row, st.reward, b.rewards, nr, "history reward");
      b.actions[row] = static_cast<std::uint8_t>(action_index(st.action));
      b.eligible[row] = st.eas.mask();
      b.valid[row] = 1;
    }
    const std::size_t row = s * T + T - 1;
    put(row, q.state, b.states, ds, "state");
    if (!prompts.empty()) put(row, prompts[s], b.returns, nr, "prompt");
    b.eligible[row] = q.eas.mask();
    b.valid[row] = 1;
  }
  return b;
}

std::vector<QuantileMatrix> PolicyModel::predict_quantiles(std::span<const InferenceQuery> qs) const {
  if (qs.empty()) return {};
  // The current step's R, a and r tokens are placeholders here: Q_t reads
  // the state token, which cannot attend to them.
  ModelBatch b = query_batch(qs, {});
  diff::Graph<float> g(net_.params(), diff::GradMode::kNone);
  auto out = net_.forward(g, b);
  const auto& v = g.value(out.quantiles);
  const DTConfig& cfg = config();
  const std::size_t width = cfg.reward_dim * cfg.levels();
  std::vector<QuantileMatrix> res;
  res.reserve(qs.size());
  std::vector<double> flat(width);
  for (std::size_t s = 0; s < qs.size(); ++s) {
    const std::size_t row = s * cfg.context_length + cfg.context_length - 1;
    for (std::size_t c = 0; c < width; ++c) flat[c] = v.at(row, c);
    res.push_back(QuantileMatrix::from_flat(flat, cfg.reward_dim, cfg.levels()));
  }
  return res;
}

QuantileMatrix PolicyModel::predict_quantiles(const InferenceQuery& q) const {
  return predict_quantiles(std::span<const InferenceQuery>(&q, 1)).front();
}

std::vector<ActionLogits> PolicyModel::action_logits(std::span<const InferenceQuery> qs,
                                                     std::span<const std::vector<double>> prompts) const {
  if (prompts.size() != qs.size()) throw ShapeError("action_logits: one prompt per query required");
  if (qs.empty()) return {};
  ModelBatch b = query_batch(qs, prompts);
  diff::Graph<float> g(net_.params(), diff::GradMode::kNone);
  auto out = net_.forward(g, b);
  const auto& v = g.value(out.logits);
  const std::size_t T = config().context_length;
  std::vector<ActionLogits> res(qs.size());
  for (std::size_t s = 0; s < qs.size(); ++s)
    for (std::size_t a = 0; a < kNumActions; ++a) res[s][a] = v.at(s * T + T - 1, a);
  return res;
}

ActionLogits PolicyModel::action_logits(const InferenceQuery& q, std::span<const double> prompt) const {
  std::vector<std::vector<double>> p{std::vector<double>(prompt.begin(), prompt.end())};
  return action_logits(std::span<const InferenceQuery>(&q, 1), p).front();
}

void PolicyModel::save(const std::filesystem::path& path) const {
  nlohmann::json cfg = {{"model", to_json(config())},
                        {"normalizer", net_.normalizer().to_json()},
                        {"metadata", metadata_}};
  diff::write_checkpoint(path, net_.params(), cfg.dump());
}

PolicyModel PolicyModel::load(const std::filesystem::path& path) {
  diff::Checkpoint ck = diff::read_checkpoint(path);
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(ck.config);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": checkpoint config block is not valid JSON: " + e.what());
  }
  if (!cfg.contains("model") || !cfg.contains("normalizer")) {
    throw FormatError(path.string() + ": checkpoint config lacks model or normalizer block");
  }
  DecisionTransformer<float> net(dt_config_from_json(cfg.at("model")));
  diff::load_parameters(net.params(), ck);
  net.normalizer() = Normalizer::from_json(cfg.at("normalizer"), net.config());
  return PolicyModel(std::move(net), cfg.value("metadata", nlohmann::json::object()));
}

}  // namespace notifdt::model
