#include "notifdt/decisionsvc/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "notifdt/common/errors.hpp"
#include "notifdt/common/rng.hpp"
#include "notifdt/decisionsvc/interpolate.hpp"
#include "notifdt/pipeline/pipeline.hpp"

namespace notifdt::svc {

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kLongAction = 0;
constexpr std::size_t kLongEas = 1;
constexpr std::size_t kLongPrevMask = 3;

bool usable_key(const store::SlotRecord& r, std::string_view key) {
  return key != store::kIgnoreAllKey && !r.strings.empty() && r.strings[0] == key;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - 1;
  const std::size_t idx = std::min(k, v.size() - 1);
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
  return v[idx];
}

Action sample_action(std::span<const double> probs, EligibleActionSet eas, std::uint64_t seed) {
  Rng rng(seed);
  const double u = rng.uniform();
  double acc = 0.0;
  Action last = Action::kDontSend;
  for (std::size_t a = 0; a < kNumActions; ++a) {
    if (!eas.contains(action_from_index(a))) continue;
    acc += probs[a];
    last = action_from_index(a);
    if (u < acc) return last;
  }
  return last;
}

}  // namespace

std::string_view prompt_mode_name(PromptMode m) {
  switch (m) {
    case PromptMode::kLearned: return "learned";
    case PromptMode::kConstant: return "constant";
    case PromptMode::kManual: return "manual";
  }
  return "?";
}

PromptMode parse_prompt_mode(std::string_view name) {
  if (name == "learned") return PromptMode::kLearned;
  if (name == "constant") return PromptMode::kConstant;
  if (name == "manual") return PromptMode::kManual;
  throw ContractError("unknown prompt mode '" + std::string(name) + "' (expected learned, constant or manual)");
}

std::string ServiceMetrics::to_text() const {
  std::ostringstream os;
  auto line = [&](const char* name, const char* type, auto value) {
    os << "# TYPE " << name << ' ' << type << '\n' << name << ' ' << value << '\n';
  };
  line("notifdt_decisions_total", "counter", decisions);
  line("notifdt_rejected_requests_total", "counter", rejected);
  line("notifdt_store_write_failures_total", "counter", write_failures);
  line("notifdt_quantile_crossing_rows_total", "counter", crossing_rows);
  line("notifdt_ingested_rewards_total", "counter", ingested);
  os << "# TYPE notifdt_decision_latency_ms summary\n";
  os << "notifdt_decision_latency_ms{quantile=\"0.5\"} " << latency_p50_ms << '\n';
  os << "notifdt_decision_latency_ms{quantile=\"0.99\"} " << latency_p99_ms << '\n';
  line("notifdt_store_users", "gauge", store_users);
  line("notifdt_store_records", "gauge", store_records);
  line("notifdt_store_max_occupancy", "gauge", store_max_occupancy);
  return os.str();
}

struct DecisionService::Prepared {
  std::vector<model::ContextStep> usable;
  std::span<const model::ContextStep> context;
  store::PendingReward pending;
  model::InferenceQuery query;
  model::QuantileMatrix quantiles;
  std::vector<double> prompt;
  model::ActionLogits logits{};
  Clock::time_point start;
};

DecisionService::DecisionService(std::shared_ptr<const model::PolicyModel> model, store::SequenceStore store,
                                 ServiceOptions options)
    : model_(std::move(model)), store_(std::move(store)), options_(std::move(options)) {
  if (!model_) throw ContractError("DecisionService: no model");
  if (options_.lock_stripes == 0) throw ContractError("DecisionService: lock_stripes must be positive");
  if (store_.capacity() != options_.capacity) {
    throw ContractError("DecisionService: store capacity " + std::to_string(store_.capacity()) +
                        " disagrees with configured K=" + std::to_string(options_.capacity));
  }
  layout_.state_dim = model_->config().state_dim;
  layout_.reward_dim = model_->config().reward_dim;
  stripes_ = std::make_unique<std::mutex[]>(options_.lock_stripes);
  latencies_.reserve(options_.latency_window);
}

DecisionService::DecisionService(std::shared_ptr<const model::PolicyModel> model, ServiceOptions options)
    : DecisionService(std::move(model), store::SequenceStore(options.capacity), options) {}

void DecisionService::validate(const DecisionRequest& r) const {
  const auto& cfg = model_->config();
  const std::size_t nr = cfg.reward_dim;
  if (r.state.size() != cfg.state_dim) {
    throw ShapeError("decide: state has " + std::to_string(r.state.size()) + " features, model expects " +
                     std::to_string(cfg.state_dim));
  }
  if (r.eas.empty()) throw ContractError("decide: empty eligible action set for user " + std::to_string(r.user_id));
  if (!r.eas.contains(Action::kDontSend)) {
    throw ContractError("decide: eligible action set " + to_string(r.eas) + " lacks DontSend");
  }
  if (r.timestamp_ms <= 0) throw ContractError("decide: timestamp must be positive");
  for (std::size_t a = 0; a < kNumActions; ++a) {
    const auto& p = r.predicted_rewards[a];
    if (!p.empty() && p.size() != nr) {
      throw ShapeError("decide: predicted rewards for " + std::string(action_name(action_from_index(a))) +
                       " have " + std::to_string(p.size()) + " components, expected " + std::to_string(nr));
    }
  }
  if (r.prompt.rtg_override && r.prompt.rtg_override->size() != nr) {
    throw ShapeError("decide: rtg override has " + std::to_string(r.prompt.rtg_override->size()) +
                     " components, expected " + std::to_string(nr));
  }
  switch (r.mode) {
    case PromptMode::kLearned: {
      if (r.prompt.alphas.size() != nr) {
        throw ShapeError("decide: " + std::to_string(r.prompt.alphas.size()) + " target alphas for " +
                         std::to_string(nr) + " rewards");
      }
      const auto& grid = cfg.quantile_grid;
      for (double a : r.prompt.alphas) {
        if (!(a > 0.0 && a < 1.0)) throw ContractError("decide: alpha " + std::to_string(a) + " outside (0, 1)");
        if (grid.size() < 2 && std::find(grid.begin(), grid.end(), a) == grid.end()) {
          throw ContractError("decide: alpha " + std::to_string(a) + " is off a single-level grid");
        }
      }
      break;
    }
    case PromptMode::kConstant:
    case PromptMode::kManual:
      if (!r.prompt.rtg_override && model_->cohort_prompt().size() != nr) {
        throw ContractError("decide: " + std::string(prompt_mode_name(r.mode)) +
                            " prompt needs an rtg override or a checkpoint cohort prompt");
      }
      break;
  }
}

std::vector<model::ContextStep> DecisionService::history(std::uint64_t user) const {
  const std::size_t sd = layout_.state_dim, nr = layout_.reward_dim;
  const auto raw = store_.read_sequence(user, options_.capacity);
  auto decodable = [&](const store::SlotRecord& r) {
    return r.floats.size() == layout_.float_count() && r.longs.size() >= RecordLayout::kLongCount;
  };
  const store::PendingReward pending = store_.peek_pending(user);
  std::vector<model::ContextStep> out;
  for (std::size_t k = 0; k < raw.size(); ++k) {
    const auto& rec = raw[k];
    if (!usable_key(rec, options_.model_key) || !decodable(rec)) continue;
    model::ContextStep s;
    s.state.assign(rec.floats.begin(), rec.floats.begin() + static_cast<std::ptrdiff_t>(sd));
    s.rtg.assign(rec.floats.begin() + static_cast<std::ptrdiff_t>(sd),
                 rec.floats.begin() + static_cast<std::ptrdiff_t>(sd + nr));
    s.reward.assign(rec.floats.begin() + static_cast<std::ptrdiff_t>(sd + nr),
                    rec.floats.begin() + static_cast<std::ptrdiff_t>(sd + 2 * nr));
    s.action = action_from_index(static_cast<std::size_t>(rec.longs[kLongAction]) % kNumActions);
    s.eas = EligibleActionSet(static_cast<std::uint8_t>(rec.longs[kLongEas]));
    // Realized values reach the record written after the step.
    if (k + 1 < raw.size() && decodable(raw[k + 1])) {
      const auto& next = raw[k + 1];
      const auto mask = static_cast<std::uint8_t>(next.longs[kLongPrevMask]);
      for (std::size_t i = 0; i < nr; ++i) {
        if ((mask >> i) & 1u) s.reward[i] = next.floats[sd + 2 * nr + i];
      }
    } else if (k + 1 == raw.size() && !pending.empty() && pending.values.size() == nr) {
      for (std::size_t i = 0; i < nr; ++i) {
        if ((pending.mask >> i) & 1u) s.reward[i] = pending.values[i];
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void DecisionService::prepare(const DecisionRequest& r, Prepared& p) const {
  p.start = Clock::now();
  p.usable = history(r.user_id);
  const std::size_t keep = std::min(p.usable.size(), model_->config().context_length - 1);
  p.context = std::span<const model::ContextStep>(p.usable).last(keep);
  p.pending = store_.peek_pending(r.user_id);
  p.query = model::InferenceQuery{p.context, r.state, r.eas};
}

void DecisionService::finish(const DecisionRequest& r, Prepared& p, DecisionResponse& resp) {
  const std::size_t nr = layout_.reward_dim;
  const auto probs = model::masked_softmax(p.logits, r.eas);
  std::copy(probs.begin(), probs.end(), resp.probabilities.begin());
  resp.user_id = r.user_id;
  resp.action = r.sample_seed ? sample_action(probs, r.eas, *r.sample_seed) : model::masked_argmax(p.logits, r.eas);
  resp.prompt = p.prompt;
  resp.history_length = p.context.size();

  store::SlotRecord rec;
  rec.timestamp_ms = r.timestamp_ms;
  rec.floats.reserve(layout_.float_count());
  for (double v : r.state) rec.floats.push_back(static_cast<float>(v));
  for (double v : p.prompt) rec.floats.push_back(static_cast<float>(v));
  const auto& predicted = r.predicted_rewards[action_index(resp.action)];
  for (std::size_t i = 0; i < nr; ++i) rec.floats.push_back(predicted.empty() ? 0.0f : static_cast<float>(predicted[i]));
  const bool carry = !p.pending.empty() && p.pending.values.size() == nr;
  for (std::size_t i = 0; i < nr; ++i) rec.floats.push_back(carry ? static_cast<float>(p.pending.values[i]) : 0.0f);
  rec.longs = {static_cast<std::int64_t>(action_index(resp.action)),
               r.eas.mask(),
               0,
               carry ? p.pending.mask : 0,
               static_cast<std::int64_t>(resp.history_length),
               static_cast<std::int64_t>(r.mode)};
  rec.strings = {options_.model_key, std::string(prompt_mode_name(r.mode))};
  try {
    store_.write_partial(r.user_id, std::move(rec));
    if (carry) store_.take_pending(r.user_id);
  } catch (const IoError& e) {
    resp.write_failed = true;
    resp.write_error = e.what();
  } catch (const ContractError& e) {
    resp.write_failed = true;
    resp.write_error = e.what();
  }
  if (resp.write_failed) ++write_failures_;
  ++decisions_;
  record_latency(std::chrono::duration<double, std::milli>(Clock::now() - p.start).count());
}

std::vector<std::size_t> DecisionService::lock_order(std::span<const DecisionRequest* const> wave) const {
  std::vector<std::size_t> idx;
  idx.reserve(wave.size());
  for (const auto* r : wave) idx.push_back(std::hash<std::uint64_t>{}(r->user_id) % options_.lock_stripes);
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

void DecisionService::record_latency(double ms) {
  std::lock_guard lock(latency_mutex_);
  if (latencies_.size() < options_.latency_window) {
    latencies_.push_back(ms);
  } else if (options_.latency_window > 0) {
    latencies_[latency_next_] = ms;
    latency_next_ = (latency_next_ + 1) % options_.latency_window;
  }
}

DecisionResponse DecisionService::decide(const DecisionRequest& request) {
  return std::move(decide_batch(std::span<const DecisionRequest>(&request, 1)).front());
}

std::vector<DecisionResponse> DecisionService::decide_batch(std::span<const DecisionRequest> requests) {
  for (const auto& r : requests) {
    try {
      validate(r);
    } catch (...) {
      ++rejected_;
      throw;
    }
  }
  const auto& cfg = model_->config();
  std::vector<DecisionResponse> out(requests.size());

  // Wave w holds each user's w-th request, so repeats see earlier writes.
  std::vector<std::vector<std::size_t>> waves;
  {
    std::map<std::uint64_t, std::size_t> seen;
    for (std::size_t i = 0; i < requests.size(); ++i) {
      const std::size_t w = seen[requests[i].user_id]++;
      if (w >= waves.size()) waves.emplace_back();
      waves[w].push_back(i);
    }
  }

  for (const auto& wave : waves) {
    std::vector<const DecisionRequest*> reqs;
    for (std::size_t i : wave) reqs.push_back(&requests[i]);
    std::vector<std::unique_lock<std::mutex>> locks;
    for (std::size_t s : lock_order(reqs)) locks.emplace_back(stripes_[s]);

    std::vector<Prepared> prep(wave.size());
    std::vector<model::InferenceQuery> queries;
    for (std::size_t j = 0; j < wave.size(); ++j) {
      prepare(*reqs[j], prep[j]);
      queries.push_back(prep[j].query);
    }
    auto quantiles = model_->predict_quantiles(queries);
    std::vector<std::vector<double>> prompts(wave.size());
    for (std::size_t j = 0; j < wave.size(); ++j) {
      const DecisionRequest& r = *reqs[j];
      auto& q = quantiles[j];
      const std::size_t crossed = sort_quantile_rows(q);
      crossing_rows_ += crossed;
      out[wave[j]].quantile_crossings = crossed;
      switch (r.mode) {
        case PromptMode::kLearned:
          prompts[j] = interpolate_quantiles(q, cfg.quantile_grid, r.prompt.alphas);
          break;
        case PromptMode::kConstant:
          prompts[j] = r.prompt.rtg_override ? *r.prompt.rtg_override : model_->cohort_prompt();
          break;
        case PromptMode::kManual: {
          const auto initial = r.prompt.rtg_override ? *r.prompt.rtg_override : model_->cohort_prompt();
          std::vector<std::vector<double>> observed;
          for (const auto& s : prep[j].usable) observed.push_back(s.reward);
          prompts[j] = pipeline::manual_prompt(initial, observed);
          break;
        }
      }
      prep[j].prompt = prompts[j];
      out[wave[j]].quantiles = std::move(q);
    }
    const auto logits = model_->action_logits(queries, prompts);
    for (std::size_t j = 0; j < wave.size(); ++j) {
      prep[j].logits = logits[j];
      finish(*reqs[j], prep[j], out[wave[j]]);
    }
  }
  return out;
}

void DecisionService::ingest_external_reward(std::uint64_t user, std::span<const double> values,
                                             std::uint8_t mask) {
  if (values.size() != layout_.reward_dim) {
    throw ShapeError("ingest_external_reward: " + std::to_string(values.size()) + " components, expected " +
                     std::to_string(layout_.reward_dim));
  }
  std::lock_guard lock(stripes_[std::hash<std::uint64_t>{}(user) % options_.lock_stripes]);
  store_.add_pending(user, values, mask);
  ++ingested_;
}

ServiceMetrics DecisionService::metrics() const {
  ServiceMetrics m;
  m.decisions = decisions_;
  m.rejected = rejected_;
  m.write_failures = write_failures_;
  m.crossing_rows = crossing_rows_;
  m.ingested = ingested_;
  std::vector<double> lat;
  {
    std::lock_guard lock(latency_mutex_);
    lat = latencies_;
  }
  m.latency_p50_ms = percentile(lat, 0.5);
  m.latency_p99_ms = percentile(lat, 0.99);
  m.store_users = store_.user_count();
  m.store_records = store_.total_occupancy();
  m.store_max_occupancy = store_.max_occupancy();
  return m;
}

// ---- wire schema ----

namespace {

nlohmann::json eas_to_json(EligibleActionSet eas) {
  auto arr = nlohmann::json::array();
  for (Action a : eas.actions()) arr.push_back(action_name(a));
  return arr;
}

template <typename T>
T field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ContractError(std::string("request: missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ContractError(std::string("request: field '") + key + "' has the wrong type");
  }
}

}  // namespace

nlohmann::json to_json(const DecisionRequest& r) {
  nlohmann::json j{{"user_id", r.user_id},
                   {"state", r.state},
                   {"eas", eas_to_json(r.eas)},
                   {"quality", r.quality},
                   {"timestamp_ms", r.timestamp_ms},
                   {"mode", prompt_mode_name(r.mode)},
                   {"alphas", r.prompt.alphas}};
  if (r.prompt.rtg_override) j["rtg_override"] = *r.prompt.rtg_override;
  bool any = false;
  for (const auto& p : r.predicted_rewards) any = any || !p.empty();
  if (any) {
    j["predicted_rewards"] = nlohmann::json::object();
    for (std::size_t a = 0; a < kNumActions; ++a) {
      j["predicted_rewards"][std::string(action_name(action_from_index(a)))] = r.predicted_rewards[a];
    }
  }
  if (r.sample_seed) j["sample_seed"] = *r.sample_seed;
  return j;
}

DecisionRequest request_from_json(const nlohmann::json& j) {
  static const char* const kKnown[] = {"user_id", "state",       "eas",          "quality",          "timestamp_ms",
                                       "mode",    "alphas",      "rtg_override", "predicted_rewards", "sample_seed"};
  if (!j.is_object()) throw ContractError("request: body must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(std::begin(kKnown), std::end(kKnown), [&](const char* k) { return key == k; }) ==
        std::end(kKnown)) {
      throw ContractError("request: unknown field '" + key + "'");
    }
  }
  DecisionRequest r;
  r.user_id = field<std::uint64_t>(j, "user_id");
  r.state = field<std::vector<double>>(j, "state");
  for (const auto& name : field<std::vector<std::string>>(j, "eas")) r.eas.insert(parse_action(name));
  r.quality = j.contains("quality") ? field<double>(j, "quality") : 0.0;
  r.timestamp_ms = field<std::int64_t>(j, "timestamp_ms");
  r.mode = j.contains("mode") ? parse_prompt_mode(field<std::string>(j, "mode")) : PromptMode::kLearned;
  if (j.contains("alphas")) r.prompt.alphas = field<std::vector<double>>(j, "alphas");
  if (j.contains("rtg_override")) r.prompt.rtg_override = field<std::vector<double>>(j, "rtg_override");
  if (j.contains("predicted_rewards")) {
    const auto& pr = j.at("predicted_rewards");
    if (!pr.is_object()) throw ContractError("request: 'predicted_rewards' must map action names to vectors");
    for (const auto& [name, v] : pr.items()) {
      if (!v.is_array()) throw ContractError("request: predicted rewards for '" + name + "' must be an array");
      r.predicted_rewards[action_index(parse_action(name))] = field<std::vector<double>>(pr, name.c_str());
    }
  }
  if (j.contains("sample_seed")) r.sample_seed = field<std::uint64_t>(j, "sample_seed");
  return r;
}

nlohmann::json to_json(const DecisionResponse& r) {
  nlohmann::json probs = nlohmann::json::object();
  for (std::size_t a = 0; a < kNumActions; ++a) probs[std::string(action_name(action_from_index(a)))] = r.probabilities[a];
  auto q = nlohmann::json::array();
  for (std::size_t i = 0; i < r.quantiles.rewards; ++i) {
    auto row = r.quantiles.row(i);
    q.push_back(std::vector<double>(row.begin(), row.end()));
  }
  nlohmann::json j{{"user_id", r.user_id},
                   {"action", action_name(r.action)},
                   {"probabilities", probs},
                   {"prompt", r.prompt},
                   {"quantiles", q},
                   {"history_length", r.history_length},
                   {"quantile_crossings", r.quantile_crossings},
                   {"write_failed", r.write_failed}};
  if (r.write_failed) j["write_error"] = r.write_error;
  return j;
}

}  // namespace notifdt::svc
