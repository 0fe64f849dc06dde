#include "notifdt/dtmodel/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "notifdt/common/errors.hpp"
#include "notifdt/common/rng.hpp"

namespace notifdt::model {

nlohmann::json to_json(const EvalMetrics& m) {
  return {{"action_accuracy", m.action_accuracy},
          {"decision_accuracy", m.decision_accuracy},
          {"pinball_loss", m.pinball_loss},
          {"loss_action", m.loss_action},
          {"loss_rtg", m.loss_rtg},
          {"loss_total", m.loss_total},
          {"steps", m.steps},
          {"decisions", m.decisions}};
}

nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"action_accuracy", m.eval.action_accuracy},
          {"decision_accuracy", m.eval.decision_accuracy},
          {"pinball_loss", m.eval.pinball_loss},
          {"loss_total", m.eval.loss_total},
          {"train_loss", m.train_loss}};
}

EvalMetrics evaluate(const DecisionTransformer<float>& net, std::span<const TrajectoryWindow> windows,
                     std::size_t batch_size) {
  const DTConfig& cfg = net.config();
  EvalMetrics m;
  if (windows.empty()) return m;
  batch_size = std::max<std::size_t>(1, batch_size);
  std::size_t correct = 0, decided = 0;
  double pin = 0, la = 0, lr = 0;
  std::vector<const TrajectoryWindow*> ptrs;
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    ptrs.clear();
    for (std::size_t i = start; i < std::min(windows.size(), start + batch_size); ++i) ptrs.push_back(&windows[i]);
    ModelBatch b = make_batch(ptrs, cfg);
    diff::Graph<float> g(net.params(), diff::GradMode::kNone);
    auto out = net.forward(g, b);
    const double nb = static_cast<double>(b.sequences);
    la += g.value(net.action_loss(g, out.logits, b)).item() * nb;
    lr += g.value(net.rtg_loss(g, out.quantiles, b)).item() * nb;
    const auto& logits = g.value(out.logits);
    const auto& quant = g.value(out.quantiles);
    for (std::size_t r = 0; r < b.rows(); ++r) {
      if (!b.valid[r]) continue;
      ++m.steps;
      double row[kNumActions];
      for (std::size_t a = 0; a < kNumActions; ++a) row[a] = logits.at(r, a);
      const bool hit = action_index(masked_argmax(row, EligibleActionSet(b.eligible[r]))) == b.actions[r];
      correct += hit;
      if (r % b.steps == b.steps - 1) {
        ++m.decisions;
        decided += hit;
      }
      for (std::size_t i = 0; i < cfg.reward_dim; ++i) {
        const double y = b.returns[r * cfg.reward_dim + i];
        for (std::size_t j = 0; j < cfg.levels(); ++j) {
          const double a = cfg.quantile_grid[j];
          const double d = y - quant.at(r, i * cfg.levels() + j);
          pin += d >= 0 ? a * d : (a - 1) * d;
        }
      }
    }
  }
  const double n = static_cast<double>(windows.size());
  m.action_accuracy = m.steps ? static_cast<double>(correct) / static_cast<double>(m.steps) : 0.0;
  m.decision_accuracy = m.decisions ? static_cast<double>(decided) / static_cast<double>(m.decisions) : 0.0;
  m.pinball_loss = m.steps ? pin / static_cast<double>(m.steps * cfg.reward_dim * cfg.levels()) : 0.0;
  m.loss_action = la / n;
  m.loss_rtg = lr / n;
  m.loss_total = m.loss_action + cfg.rtg_weight * m.loss_rtg;
  return m;
}

EvalMetrics evaluate(const PolicyModel& model, std::span<const TrajectoryWindow> windows, std::size_t batch_size) {
  return evaluate(model.network(), windows, batch_size);
}

std::vector<double> rtg_percentile(std::span<const TrajectoryWindow> windows, std::size_t reward_dim, double q) {
  std::vector<std::vector<double>> cols(reward_dim);
  for (const auto& w : windows) {
    for (std::size_t t = 0; t < std::min(w.context_length, w.steps.size()); ++t) {
      if (w.steps[t].pad) continue;
      for (std::size_t i = 0; i < reward_dim; ++i) cols[i].push_back(w.steps[t].rtg.at(i));
    }
  }
  std::vector<double> out(reward_dim, 0.0);
  for (std::size_t i = 0; i < reward_dim; ++i) {
    auto& c = cols[i];
    if (c.empty()) continue;
    std::sort(c.begin(), c.end());
    const double h = (static_cast<double>(c.size()) - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, c.size() - 1);
    out[i] = c[lo] + (h - static_cast<double>(lo)) * (c[hi] - c[lo]);
  }
  return out;
}

namespace {

diff::AdamOptions adam_options(const TrainOptions& o) {
  diff::AdamOptions a;
  a.learning_rate = o.learning_rate;
  a.clip_norm = o.clip_norm;
  return a;
}

}  // namespace

Trainer::Trainer(DecisionTransformer<float>& net, const TrainOptions& options, std::size_t total_steps)
    : net_(net), options_(options), total_steps_(total_steps), adam_(net.params(), adam_options(options)) {
  net_.params().set_trainable_prefixes(options_.trainable_prefixes);
}

double Trainer::current_learning_rate() const {
  const double t = static_cast<double>(adam_.steps_taken());
  const double base = options_.learning_rate;
  if (options_.warmup_steps > 0 && t < static_cast<double>(options_.warmup_steps)) {
    return base * (t + 1) / static_cast<double>(options_.warmup_steps);
  }
  if (total_steps_ <= options_.warmup_steps) return base;
  const double span = static_cast<double>(total_steps_ - options_.warmup_steps);
  const double progress = std::clamp((t - static_cast<double>(options_.warmup_steps)) / span, 0.0, 1.0);
  const double floor = base * options_.final_lr_ratio;
  return floor + (base - floor) * 0.5 * (1 + std::cos(3.14159265358979323846 * progress));
}

double Trainer::step(const ModelBatch& batch) {
  auto& params = net_.params();
  params.zero_grad();
  diff::Graph<float> g(params);
  auto out = net_.forward(g, batch);
  diff::Var loss = net_.total_loss(g, out, batch);
  const double value = g.value(loss).item();
  if (!std::isfinite(value)) {
    g.check_finite();
    throw NumericError("training loss is not finite at step " + std::to_string(adam_.steps_taken()));
  }
  g.backward(loss);
  const double norm = adam_.step(params, current_learning_rate());
  if (!std::isfinite(norm)) {
    throw NumericError("gradient norm is not finite at step " + std::to_string(adam_.steps_taken()));
  }
  return value;
}

TrainResult train(std::span<const TrajectoryWindow> train_set, std::span<const TrajectoryWindow> validation,
                  const DTConfig& cfg, const TrainOptions& options,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (train_set.empty()) throw ContractError("train: empty training set");
  if (options.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  DecisionTransformer<float> net(cfg);
  if (options.fit_normalizer) net.normalizer() = Normalizer::fit(train_set, cfg);

  const std::size_t per_epoch = (train_set.size() + options.batch_size - 1) / options.batch_size;
  std::size_t total = per_epoch * options.epochs;
  if (options.max_steps > 0) total = std::min(total, options.max_steps);
  Trainer trainer(net, options, total);

  std::vector<std::size_t> order(train_set.size());
  std::vector<const TrajectoryWindow*> ptrs;
  std::vector<EpochMetrics> history;
  const auto eval_set = validation.empty() ? train_set : validation;
  for (std::size_t epoch = 0; epoch < options.epochs && trainer.steps_taken() < total; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(options.seed, 0x747261696eULL, epoch));
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0;
    std::size_t updates = 0;
    for (std::size_t start = 0; start < order.size() && trainer.steps_taken() < total; start += options.batch_size) {
      ptrs.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + options.batch_size); ++i)
        ptrs.push_back(&train_set[order[i]]);
      loss_sum += trainer.step(make_batch(ptrs, cfg));
      ++updates;
    }
    EpochMetrics em;
    em.epoch = epoch + 1;
    em.train_loss = updates ? loss_sum / static_cast<double>(updates) : 0.0;
    em.eval = evaluate(net, eval_set);
    history.push_back(em);
    if (on_epoch) on_epoch(em);
  }
  net.params().set_trainable_prefixes({});

  nlohmann::json meta = {
      {"cohort_prompt", rtg_percentile(train_set, cfg.reward_dim, options.cohort_quantile)},
      {"cohort_quantile", options.cohort_quantile},
      {"train_windows", train_set.size()},
      {"train_steps", trainer.steps_taken()},
      {"train_seed", options.seed},
  };
  return TrainResult{PolicyModel(std::move(net), std::move(meta)), std::move(history)};
}

}  // namespace notifdt::model
