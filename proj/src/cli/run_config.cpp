#include "notifdt/cli/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "notifdt/common/errors.hpp"

namespace notifdt::cli {

namespace {

using nlohmann::json;

// Reads known keys of one block and rejects the rest.
class BlockReader {
 public:
  BlockReader(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config block '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }

  // Keys not read so far.
  json rest() const {
    json r = json::object();
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) r[k] = v;
    }
    return r;
  }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError("unknown config key '" + name_ + "." + k + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

const json& block(const json& root, const char* name, const json& empty) {
  return root.contains(name) ? root.at(name) : empty;
}

}  // namespace

void RunPaths::create() const {
  for (const auto& d : {checkpoints(), datasets(), logs(), reports(), store()}) std::filesystem::create_directories(d);
}

RunConfig parse_run_config(const json& root) {
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> blocks{"run_dir", "simulator", "pipeline", "model",
                                            "training", "serving",  "evaluation"};
  for (const auto& [k, _] : root.items()) {
    if (!blocks.contains(k)) throw ConfigError("unknown config block '" + k + "'");
  }
  const json empty = json::object();
  RunConfig c;
  if (root.contains("run_dir")) {
    if (!root.at("run_dir").is_string()) throw ConfigError("run_dir must be a string");
    c.run_dir = root.at("run_dir").get<std::string>();
  }

  {
    BlockReader r(block(root, "simulator", empty), "simulator");
    r.get("users", c.simulator.users);
    r.get("steps", c.simulator.steps);
    r.get("epsilon", c.simulator.epsilon);
    r.get("seed", c.simulator.seed);
    c.simulator.params = sim::sim_config_from_json(r.rest());
  }
  {
    BlockReader r(block(root, "pipeline", empty), "pipeline");
    auto& s = c.pipeline.segment;
    r.get("T", s.context_length);
    r.get("H", s.horizon);
    r.get("gamma", s.gamma);
    r.get("stride", s.stride);
    r.get("pad_short", s.pad_short);
    r.get("warmup_windows", s.warmup_windows);
    r.get("train_ratio", c.pipeline.train_ratio);
    r.get("split_seed", c.pipeline.split_seed);
    r.finish();
  }
  {
    json m = block(root, "model", empty);
    if (!m.is_object()) throw ConfigError("config block 'model' must be an object");
    auto fill = [&](const char* key, const json& v) {
      if (!m.contains(key)) m[key] = v;
    };
    fill("T", c.pipeline.segment.context_length);
    fill("H", c.pipeline.segment.horizon);
    fill("gamma", c.pipeline.segment.gamma);
    fill("n_r", kDefaultRewardCount);
    fill("state_dim", sim::kStateDim);
    c.model = model::dt_config_from_json(m);
  }
  {
    BlockReader r(block(root, "training", empty), "training");
    auto& t = c.training;
    r.get("epochs", t.epochs);
    r.get("batch_size", t.batch_size);
    r.get("learning_rate", t.learning_rate);
    r.get("warmup_steps", t.warmup_steps);
    r.get("final_lr_ratio", t.final_lr_ratio);
    r.get("clip_norm", t.clip_norm);
    r.get("max_steps", t.max_steps);
    r.get("seed", t.seed);
    r.get("cohort_quantile", t.cohort_quantile);
    r.get("trainable_prefixes", t.trainable_prefixes);
    r.finish();
  }
  {
    BlockReader r(block(root, "serving", empty), "serving");
    auto& s = c.serving;
    r.get("capacity", s.capacity);
    r.get("ttl_days", s.ttl_days);
    r.get("host", s.host);
    r.get("port", s.port);
    r.get("model_key", s.model_key);
    std::string mode(svc::prompt_mode_name(s.mode));
    r.get("mode", mode);
    try {
      s.mode = svc::parse_prompt_mode(mode);
    } catch (const ContractError& e) {
      throw ConfigError(std::string("serving.mode: ") + e.what());
    }
    r.get("alphas", s.alphas);
    std::vector<double> override_value;
    r.get("rtg_override", override_value);
    if (!override_value.empty()) s.rtg_override = override_value;
    r.get("sample", s.sample);
    r.get("bench_decisions", s.bench_decisions);
    r.get("bench_users", s.bench_users);
    r.finish();
  }
  {
    BlockReader r(block(root, "evaluation", empty), "evaluation");
    auto& e = c.evaluation;
    r.get("sweep_alphas", e.sweep_alphas);
    r.get("users", e.users);
    r.get("steps", e.steps);
    r.get("seeds", e.seeds);
    r.get("bootstrap_samples", e.bootstrap_samples);
    r.get("bootstrap_seed", e.bootstrap_seed);
    r.get("sweep_sample", e.sweep_sample);
    r.get("ab_baseline", e.ab_baseline);
    r.get("ab_baseline_epsilon", e.ab_baseline_epsilon);
    r.finish();
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  simulator.params.validate();
  const auto& seg = pipeline.segment;
  if (model.context_length != seg.context_length) {
    fail("model.T=" + std::to_string(model.context_length) + " disagrees with pipeline.T=" +
         std::to_string(seg.context_length));
  }
  if (model.horizon != seg.horizon) {
    fail("model.H=" + std::to_string(model.horizon) + " disagrees with pipeline.H=" + std::to_string(seg.horizon));
  }
  if (model.gamma != seg.gamma) fail("model.gamma disagrees with pipeline.gamma");
  if (model.reward_dim != kDefaultRewardCount) {
    fail("model.n_r=" + std::to_string(model.reward_dim) + " but the simulator emits " +
         std::to_string(kDefaultRewardCount) + " reward components");
  }
  if (model.state_dim != sim::kStateDim) {
    fail("model.state_dim=" + std::to_string(model.state_dim) + " but the simulator emits " +
         std::to_string(sim::kStateDim) + " state features");
  }
  if (seg.context_length == 0 || seg.stride == 0) fail("pipeline.T and pipeline.stride must be positive");
  if (!(pipeline.train_ratio > 0.0 && pipeline.train_ratio < 1.0)) fail("pipeline.train_ratio must lie in (0, 1)");
  if (!(simulator.epsilon >= 0.0 && simulator.epsilon <= 1.0)) fail("simulator.epsilon must lie in [0, 1]");
  if (simulator.users == 0 || simulator.steps == 0) fail("simulator.users and simulator.steps must be positive");
  if (training.epochs == 0 || training.batch_size == 0) fail("training.epochs and training.batch_size must be positive");
  if (!(training.learning_rate > 0.0)) fail("training.learning_rate must be positive");
  if (!(training.cohort_quantile > 0.0 && training.cohort_quantile < 1.0)) {
    fail("training.cohort_quantile must lie in (0, 1)");
  }
  if (serving.capacity == 0) fail("serving.capacity must be positive");
  if (!(serving.ttl_days > 0.0)) fail("serving.ttl_days must be positive");
  if (serving.port < 0 || serving.port > 65535) fail("serving.port out of range");
  auto check_alphas = [&](const std::vector<double>& a, const std::string& where) {
    if (a.size() != model.reward_dim) {
      fail(where + " has " + std::to_string(a.size()) + " entries, n_r is " + std::to_string(model.reward_dim));
    }
    for (double v : a) {
      if (!(v > 0.0 && v < 1.0)) fail(where + " entries must lie in (0, 1)");
    }
  };
  check_alphas(serving.alphas, "serving.alphas");
  if (serving.rtg_override && serving.rtg_override->size() != model.reward_dim) {
    fail("serving.rtg_override must have n_r entries");
  }
  if (evaluation.sweep_alphas.empty()) fail("evaluation.sweep_alphas must list at least one setting");
  for (const auto& a : evaluation.sweep_alphas) check_alphas(a, "evaluation.sweep_alphas entry");
  if (evaluation.seeds.empty()) fail("evaluation.seeds must be nonempty");
  if (evaluation.users == 0 || evaluation.steps == 0) fail("evaluation.users and evaluation.steps must be positive");
  static const std::set<std::string> baselines{"behavior", "always-dont-send", "always-push"};
  if (!baselines.contains(evaluation.ab_baseline)) {
    fail("evaluation.ab_baseline must be behavior, always-dont-send or always-push");
  }
}

json to_json(const RunConfig& c) {
  json sim = sim::to_json(c.simulator.params);
  sim["users"] = c.simulator.users;
  sim["steps"] = c.simulator.steps;
  sim["epsilon"] = c.simulator.epsilon;
  sim["seed"] = c.simulator.seed;
  const auto& s = c.pipeline.segment;
  const auto& t = c.training;
  const auto& v = c.serving;
  const auto& e = c.evaluation;
  json serving{{"capacity", v.capacity},
               {"ttl_days", v.ttl_days},
               {"host", v.host},
               {"port", v.port},
               {"model_key", v.model_key},
               {"mode", svc::prompt_mode_name(v.mode)},
               {"alphas", v.alphas},
               {"sample", v.sample},
               {"bench_decisions", v.bench_decisions},
               {"bench_users", v.bench_users}};
  if (v.rtg_override) serving["rtg_override"] = *v.rtg_override;
  return json{{"run_dir", c.run_dir},
              {"simulator", sim},
              {"pipeline",
               {{"T", s.context_length},
                {"H", s.horizon},
                {"gamma", s.gamma},
                {"stride", s.stride},
                {"pad_short", s.pad_short},
                {"warmup_windows", s.warmup_windows},
                {"train_ratio", c.pipeline.train_ratio},
                {"split_seed", c.pipeline.split_seed}}},
              {"model", model::to_json(c.model)},
              {"training",
               {{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"learning_rate", t.learning_rate},
                {"warmup_steps", t.warmup_steps},
                {"final_lr_ratio", t.final_lr_ratio},
                {"clip_norm", t.clip_norm},
                {"max_steps", t.max_steps},
                {"seed", t.seed},
                {"cohort_quantile", t.cohort_quantile},
                {"trainable_prefixes", t.trainable_prefixes}}},
              {"serving", serving},
              {"evaluation",
               {{"sweep_alphas", e.sweep_alphas},
                {"users", e.users},
                {"steps", e.steps},
                {"seeds", e.seeds},
                {"bootstrap_samples", e.bootstrap_samples},
                {"bootstrap_seed", e.bootstrap_seed},
                {"sweep_sample", e.sweep_sample},
                {"ab_baseline", e.ab_baseline},
                {"ab_baseline_epsilon", e.ab_baseline_epsilon}}}};
}

void apply_override(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' must look like block.key=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  if (path == "run_dir") {
    j["run_dir"] = value;
    return;
  }
  const auto dot = path.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == path.size()) {
    throw ConfigError("override key '" + path + "' must look like block.key");
  }
  const std::string blk = path.substr(0, dot), key = path.substr(dot + 1);
  if (!j.contains(blk)) j[blk] = json::object();
  if (!j[blk].is_object()) throw ConfigError("config block '" + blk + "' must be an object");
  j[blk][key] = value;
}

json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j = json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return j;
}

}  // namespace notifdt::cli
