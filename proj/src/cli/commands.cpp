#include "notifdt/cli/commands.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "notifdt/cli/run_config.hpp"
#include "notifdt/common/errors.hpp"
#include "notifdt/decisionsvc/server.hpp"
#include "notifdt/decisionsvc/sweep.hpp"
#include "notifdt/diffcore/gradcheck.hpp"
#include "notifdt/dtmodel/policy.hpp"
#include "notifdt/dtmodel/trainer.hpp"
#include "notifdt/notifsim/rollout.hpp"
#include "notifdt/seqstore/store.hpp"

namespace notifdt::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// A stage ran before the one producing its input.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void require(const fs::path& p, const char* producer) {
  if (!fs::exists(p)) {
    throw MissingArtifact("missing " + p.string() + " (run `notifdt " + producer + "` first)");
  }
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return json::parse(ss.str());
}

pipeline::DatasetHeader expected_header(const RunConfig& c) {
  pipeline::DatasetHeader h;
  h.reward_dim = static_cast<std::uint32_t>(c.model.reward_dim);
  h.context_length = static_cast<std::uint32_t>(c.pipeline.segment.context_length);
  h.horizon = static_cast<std::uint32_t>(c.pipeline.segment.horizon);
  h.state_dim = static_cast<std::uint32_t>(c.model.state_dim);
  h.gamma = c.pipeline.segment.gamma;
  return h;
}

std::shared_ptr<const model::PolicyModel> load_model(const RunConfig& c, const RunPaths& paths) {
  require(paths.checkpoint(), "train");
  auto m = std::make_shared<const model::PolicyModel>(model::PolicyModel::load(paths.checkpoint()));
  const auto& mc = m->config();
  if (mc.context_length != c.model.context_length || mc.reward_dim != c.model.reward_dim ||
      mc.state_dim != c.model.state_dim) {
    throw ConfigError("checkpoint " + paths.checkpoint().string() + " has T=" + std::to_string(mc.context_length) +
                      ", configuration has T=" + std::to_string(c.model.context_length));
  }
  return m;
}

svc::ServiceOptions service_options(const RunConfig& c) {
  svc::ServiceOptions o;
  o.capacity = c.serving.capacity;
  o.model_key = c.serving.model_key;
  return o;
}

svc::ServicePolicyOptions policy_options(const RunConfig& c) {
  svc::ServicePolicyOptions p;
  p.mode = c.serving.mode;
  p.prompt.alphas = c.serving.alphas;
  p.prompt.rtg_override = c.serving.rtg_override;
  p.service = service_options(c);
  p.sample = c.serving.sample;
  return p;
}

// ---- subcommands ----

int cmd_simulate(const RunConfig& c, const RunPaths& paths) {
  const auto& s = c.simulator;
  const auto log = sim::generate_logs(s.params, s.users, s.steps, s.epsilon, s.seed);
  pipeline::write_log_export(paths.log_export(), log);
  std::array<std::size_t, kNumActions> counts{};
  std::size_t explored = 0, steps = 0;
  for (const auto& u : log.users) {
    for (const auto& st : u.steps) {
      ++counts[action_index(st.action)];
      explored += st.explored;
      ++steps;
    }
  }
  json report{{"users", s.users},
              {"steps_per_user", s.steps},
              {"epsilon", s.epsilon},
              {"seed", s.seed},
              {"decisions", steps},
              {"explored_fraction", steps ? static_cast<double>(explored) / static_cast<double>(steps) : 0.0}};
  for (std::size_t a = 0; a < kNumActions; ++a) report["actions"][std::string(action_name(action_from_index(a)))] = counts[a];
  write_json(paths.reports() / "simulate.json", report);
  std::printf("simulated %zu users x %zu steps -> %s\n", s.users, s.steps, paths.log_export().c_str());
  return kExitOk;
}

int cmd_segment(const RunConfig& c, const RunPaths& paths) {
  require(paths.log_export(), "simulate");
  const auto log = pipeline::read_log_export(paths.log_export());
  const auto windows = pipeline::segment(log, c.pipeline.segment);
  std::vector<std::uint64_t> ids;
  for (const auto& u : log.users) ids.push_back(u.user_id);
  const auto split = pipeline::split_users(ids, c.pipeline.train_ratio, c.pipeline.split_seed);
  const auto train = pipeline::select_users(windows, split.train);
  const auto validation = pipeline::select_users(windows, split.validation);
  auto header = expected_header(c);
  pipeline::write_dataset(paths.train_set(), train, header);
  pipeline::write_dataset(paths.validation_set(), validation, header);
  for (const auto& w : split.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  write_json(paths.reports() / "segment.json", {{"windows", windows.size()},
                                                {"train_windows", train.size()},
                                                {"validation_windows", validation.size()},
                                                {"train_users", split.train.size()},
                                                {"validation_users", split.validation.size()},
                                                {"warnings", split.warnings}});
  std::printf("segmented %zu windows: %zu train, %zu validation\n", windows.size(), train.size(), validation.size());
  return kExitOk;
}

int cmd_train(const RunConfig& c, const RunPaths& paths) {
  require(paths.train_set(), "segment");
  const auto header = expected_header(c);
  const auto train_set = pipeline::read_dataset(paths.train_set(), header);
  pipeline::Dataset validation;
  if (fs::exists(paths.validation_set())) validation = pipeline::read_dataset(paths.validation_set(), header);
  const fs::path history_path = paths.logs() / "train_history.jsonl";
  std::ofstream history(history_path, std::ios::trunc);
  const auto t0 = std::chrono::steady_clock::now();
  auto result = model::train(train_set.windows, validation.windows, c.model, c.training,
                             [&](const model::EpochMetrics& m) {
                               history << model::to_json(m).dump() << '\n';
                               history.flush();
                               std::printf("epoch %zu  train_loss %.5f  action_accuracy %.4f  pinball %.5f\n", m.epoch,
                                           m.train_loss, m.eval.action_accuracy, m.eval.pinball_loss);
                               std::fflush(stdout);
                             });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  result.model.save(paths.checkpoint());
  json report{{"train_windows", train_set.windows.size()},
              {"validation_windows", validation.windows.size()},
              {"epochs", c.training.epochs},
              {"cohort_prompt", result.model.cohort_prompt()},
              {"model", model::to_json(c.model)}};
  if (!result.history.empty()) report["final"] = model::to_json(result.history.back());
  write_json(paths.reports() / "train.json", report);
  std::ofstream timing(paths.logs() / "timing.jsonl", std::ios::app);
  timing << json{{"stage", "train"}, {"seconds", secs}}.dump() << '\n';
  std::printf("checkpoint written to %s\n", paths.checkpoint().c_str());
  return kExitOk;
}

int cmd_eval(const RunConfig& c, const RunPaths& paths) {
  const auto m = load_model(c, paths);
  require(paths.validation_set(), "segment");
  auto data = pipeline::read_dataset(paths.validation_set(), expected_header(c));
  std::string split = "validation";
  if (data.windows.empty()) {
    require(paths.train_set(), "segment");
    data = pipeline::read_dataset(paths.train_set(), expected_header(c));
    split = "train";
  }
  const auto metrics = model::evaluate(*m, data.windows);
  json report = model::to_json(metrics);
  report["split"] = split;
  report["windows"] = data.windows.size();
  write_json(paths.reports() / "eval.json", report);
  std::printf("action_accuracy %.6f\ndecision_accuracy %.6f\npinball_loss %.6f\n", metrics.action_accuracy,
              metrics.decision_accuracy, metrics.pinball_loss);
  return kExitOk;
}

int cmd_serve(const RunConfig& c, const RunPaths& paths, bool bench, double duration) {
  const auto m = load_model(c, paths);
  if (bench) {
    const auto reqs = svc::bench_requests(m->config(), c.serving.bench_decisions, c.serving.bench_users, 1);
    svc::DecisionService in_proc(m, service_options(c));
    const auto a = svc::bench_inprocess(in_proc, reqs);
    svc::DecisionService over_http(m, service_options(c));
    svc::DecisionServer server(over_http);
    const int port = server.start("127.0.0.1", 0);
    const auto b = svc::bench_http("127.0.0.1", port, reqs);
    server.stop();
    write_json(paths.reports() / "bench.json",
               {{"model", model::to_json(m->config())}, {"results", {a.to_json(), b.to_json()}}});
    for (const auto& r : {a, b}) {
      std::printf("%-10s %zu decisions  %.1f decisions/s  p50 %.3f ms  p99 %.3f ms\n", r.transport.c_str(),
                  r.decisions, r.decisions_per_second, r.p50_ms, r.p99_ms);
    }
    return kExitOk;
  }
  store::SequenceStore st = fs::exists(paths.snapshot()) ? store::SequenceStore::load_snapshot(paths.snapshot())
                                                         : store::SequenceStore(c.serving.capacity);
  if (st.capacity() != c.serving.capacity) {
    throw ConfigError("store snapshot has K=" + std::to_string(st.capacity()) + ", serving.capacity is " +
                      std::to_string(c.serving.capacity));
  }
  svc::DecisionService service(m, std::move(st), service_options(c));
  svc::DecisionServer server(service);
  const int port = server.start(c.serving.host, c.serving.port);
  std::printf("serving on http://%s:%d\n", c.serving.host.c_str(), port);
  std::fflush(stdout);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto t0 = std::chrono::steady_clock::now();
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (duration > 0 && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >= duration) break;
  }
  server.stop();
  service.store().save_snapshot(paths.snapshot());
  std::printf("%s", service.metrics().to_text().c_str());
  return kExitOk;
}

int cmd_sweep(const RunConfig& c, const RunPaths& paths) {
  const auto m = load_model(c, paths);
  svc::SweepOptions so;
  so.n_users = c.evaluation.users;
  so.n_steps = c.evaluation.steps;
  so.seeds = c.evaluation.seeds;
  so.bootstrap_samples = c.evaluation.bootstrap_samples;
  so.bootstrap_seed = c.evaluation.bootstrap_seed;
  so.service = service_options(c);
  so.sample = c.evaluation.sweep_sample;
  const auto table = svc::prompt_sweep(m, c.evaluation.sweep_alphas, c.simulator.params, so);
  bool prompt_up = true, ctr_up = true;
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    prompt_up = prompt_up && table.rows[i].prompts[kRewardClick].mean > table.rows[i - 1].prompts[kRewardClick].mean;
    ctr_up = ctr_up && table.rows[i].report.ctr >= table.rows[i - 1].report.ctr;
  }
  json j = table.to_json();
  j["click_prompt_strictly_increasing"] = prompt_up;
  j["ctr_non_decreasing"] = ctr_up;
  write_text(paths.reports() / "sweep.csv", table.to_csv());
  write_json(paths.reports() / "sweep.json", j);
  std::printf("%s", table.to_csv().c_str());
  std::printf("click prompt strictly increasing: %s\nctr non-decreasing: %s\n", prompt_up ? "yes" : "no",
              ctr_up ? "yes" : "no");
  return kExitOk;
}

int cmd_ab(const RunConfig& c, const RunPaths& paths) {
  const auto m = load_model(c, paths);
  svc::ServicePolicy arm(m, policy_options(c));
  std::unique_ptr<sim::Policy> base;
  if (c.evaluation.ab_baseline == "behavior") {
    base = std::make_unique<sim::BehaviorPolicy>(c.simulator.params, c.evaluation.ab_baseline_epsilon);
  } else if (c.evaluation.ab_baseline == "always-push") {
    base = std::make_unique<sim::AlwaysPushPolicy>();
  } else {
    base = std::make_unique<sim::AlwaysDontSendPolicy>();
  }
  sim::ABOptions o;
  o.n_users = c.evaluation.users;
  o.n_steps = c.evaluation.steps;
  o.seeds = c.evaluation.seeds;
  o.bootstrap_samples = c.evaluation.bootstrap_samples;
  o.bootstrap_seed = c.evaluation.bootstrap_seed;
  const auto res = sim::ab_compare(arm, *base, c.simulator.params, o);
  write_json(paths.reports() / "ab.json", res.to_json());
  std::printf("%s vs %s\n", res.policy_a.c_str(), res.policy_b.c_str());
  for (const auto& d : res.deltas) std::printf("  %-9s %s\n", d.metric.c_str(), d.display().c_str());
  return kExitOk;
}

int cmd_store_admin(const RunConfig& c, const RunPaths& paths, const std::string& action, double days,
                    std::int64_t now_ms) {
  require(paths.snapshot(), "serve");
  auto st = store::SequenceStore::load_snapshot(paths.snapshot());
  if (action == "clear") {
    const std::size_t n = st.total_occupancy();
    st.clear_all();
    std::printf("cleared %zu records\n", n);
  } else {
    if (days <= 0) days = c.serving.ttl_days;
    if (now_ms <= 0) {
      now_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
                   .count();
    }
    const auto ttl = static_cast<std::int64_t>(days * 86'400'000.0);
    const std::size_t n = st.evict_ttl(now_ms, ttl);
    std::printf("evicted %zu records older than %g days\n", n, days);
  }
  st.save_snapshot(paths.snapshot());
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& c, std::size_t d_model, std::size_t context_length, double step) {
  model::DTConfig mc = c.model;
  mc.d_model = d_model;
  mc.mlp_hidden = 2 * d_model;
  mc.quantile_hidden = d_model;
  mc.gate_width = d_model;
  mc.context_length = context_length;
  mc.validate();
  const auto log = sim::generate_logs(c.simulator.params, 2, context_length + mc.horizon + 4, 0.3, c.simulator.seed);
  pipeline::SegmentOptions so = c.pipeline.segment;
  so.context_length = context_length;
  const auto windows = pipeline::segment(log, so);
  if (windows.empty()) throw ContractError("gradcheck: no windows");
  std::vector<const TrajectoryWindow*> ptrs{&windows.front(), &windows.back()};
  double worst = 0;
  for (auto mode : {model::ActionHeadMode::kReturnOnly, model::ActionHeadMode::kStateAndReturn}) {
    mc.action_head = mode;
    model::DecisionTransformer<double> net(mc);
    net.normalizer() = model::Normalizer::fit(windows, mc);
    const auto batch = model::make_batch(ptrs, mc);
    const auto rep = diff::check_gradients(
        net.params(),
        [&](diff::Graph<double>& g) { return net.total_loss(g, net.forward(g, batch), batch); }, step);
    std::printf("action_head %-3s  coordinates %zu  kinks skipped %zu  max relative error %.3e (%s)\n",
                model::to_string(mode).c_str(), rep.checked, rep.skipped_kinks, rep.max_rel_error,
                rep.worst_parameter.c_str());
    worst = std::max(worst, rep.max_rel_error);
  }
  std::printf("max relative error %.3e\n", worst);
  return worst <= 1e-4 ? kExitOk : kExitFailure;
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

int cmd_report(const RunPaths& paths, const std::vector<std::string>& compare) {
  const fs::path r = paths.reports();
  const char* known[] = {"simulate.json", "segment.json", "train.json", "eval.json", "sweep.json", "ab.json", "bench.json"};
  bool any = false;
  for (const char* k : known) any = any || fs::exists(r / k);
  if (!any) throw MissingArtifact("no completed stages under " + paths.root.string());

  std::ostringstream md;
  std::ostringstream csv;
  csv << "section,metric,value\n";
  auto flat = [&](const std::string& section, const std::string& metric, const json& v) {
    csv << section << ',' << metric << ',' << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
  };
  md << "# Run summary: " << paths.root.string() << "\n";

  if (fs::exists(r / "simulate.json")) {
    const auto j = read_json(r / "simulate.json");
    md << "\n## Simulation\n\n| metric | value |\n|---|---|\n";
    for (const char* k : {"users", "steps_per_user", "epsilon", "decisions", "explored_fraction"}) {
      md << "| " << k << " | " << j.at(k).dump() << " |\n";
      flat("simulate", k, j.at(k));
    }
  }
  if (fs::exists(r / "segment.json")) {
    const auto j = read_json(r / "segment.json");
    md << "\n## Segmentation\n\n| metric | value |\n|---|---|\n";
    for (const char* k : {"windows", "train_windows", "validation_windows", "train_users", "validation_users"}) {
      md << "| " << k << " | " << j.at(k).dump() << " |\n";
      flat("segment", k, j.at(k));
    }
  }
  if (fs::exists(r / "train.json")) {
    const auto j = read_json(r / "train.json");
    md << "\n## Training\n\n";
    md << "- windows: " << j.at("train_windows").dump() << " train, " << j.at("validation_windows").dump()
       << " validation\n";
    md << "- cohort prompt: " << j.at("cohort_prompt").dump() << "\n";
    if (j.contains("final")) md << "- final epoch: " << j.at("final").dump() << "\n";
    flat("train", "cohort_prompt", j.at("cohort_prompt"));
  }
  json eval_base;
  if (fs::exists(r / "eval.json")) {
    eval_base = read_json(r / "eval.json");
    md << "\n## Evaluation (" << eval_base.at("split").get<std::string>() << ")\n\n| metric | value |\n|---|---|\n";
    for (const char* k : {"action_accuracy", "decision_accuracy", "pinball_loss", "loss_total", "steps"}) {
      md << "| " << k << " | " << eval_base.at(k).dump() << " |\n";
      flat("eval", k, eval_base.at(k));
    }
  }
  if (!compare.empty()) {
    md << "\n## Comparison runs\n\n| run | action_accuracy | decision_accuracy | pinball_loss | delta decision_accuracy |\n"
       << "|---|---|---|---|---|\n";
    for (const auto& other : compare) {
      const fs::path p = fs::path(other) / "reports" / "eval.json";
      require(p, "eval");
      const auto j = read_json(p);
      std::string delta = "n/a";
      if (!eval_base.is_null()) {
        const double dv = j.at("decision_accuracy").get<double>() - eval_base.at("decision_accuracy").get<double>();
        delta = (dv >= 0 ? "+" : "") + fmt(dv * 100.0, 3) + " pp";
      }
      md << "| " << other << " | " << fmt(j.at("action_accuracy").get<double>()) << " | "
         << fmt(j.at("decision_accuracy").get<double>()) << " | " << fmt(j.at("pinball_loss").get<double>()) << " | "
         << delta << " |\n";
      flat("compare:" + other, "decision_accuracy", j.at("decision_accuracy"));
    }
  }
  if (fs::exists(r / "sweep.json")) {
    const auto j = read_json(r / "sweep.json");
    md << "\n## Prompt sweep\n\n| alphas | mean prompt (click) | sd | ctr | ctr 95% CI | sessions | volume |\n"
       << "|---|---|---|---|---|---|---|\n";
    std::size_t i = 0;
    for (const auto& row : j.at("rows")) {
      const auto& p = row.at("prompts").at(0);
      const auto& met = row.at("metrics");
      md << "| " << row.at("alphas").dump() << " | " << fmt(p.at("mean").get<double>()) << " | "
         << fmt(p.at("sd").get<double>()) << " | " << fmt(met.at("ctr").get<double>()) << " | ["
         << fmt(row.at("ctr_ci").at(0).get<double>()) << ", " << fmt(row.at("ctr_ci").at(1).get<double>()) << "] | "
         << met.at("sessions").dump() << " | " << met.at("volume").dump() << " |\n";
      flat("sweep" + std::to_string(i), "click_prompt_mean", p.at("mean"));
      flat("sweep" + std::to_string(i), "ctr", met.at("ctr"));
      ++i;
    }
    const bool up = j.at("click_prompt_strictly_increasing").get<bool>();
    const bool ctr = j.at("ctr_non_decreasing").get<bool>();
    md << "\nClick prompt strictly increasing across rows: " << (up ? "yes" : "no")
       << ". CTR non-decreasing across rows: " << (ctr ? "yes" : "no") << ".\n";
    flat("sweep", "click_prompt_strictly_increasing", up);
    flat("sweep", "ctr_non_decreasing", ctr);
  }
  if (fs::exists(r / "ab.json")) {
    const auto j = read_json(r / "ab.json");
    md << "\n## A/B: " << j.at("policy_a").get<std::string>() << " vs " << j.at("policy_b").get<std::string>()
       << "\n\n| metric | delta | 95% CI | significance |\n|---|---|---|---|\n";
    for (const auto& d : j.at("deltas")) {
      const std::string metric = d.at("metric").get<std::string>();
      if (d.at("undefined_baseline").get<bool>()) {
        md << "| " << metric << " | undefined baseline | | |\n";
      } else {
        md << "| " << metric << " | " << fmt(d.at("delta_pct").get<double>(), 2) << "% | ["
           << fmt(d.at("ci_low").get<double>(), 2) << "%, " << fmt(d.at("ci_high").get<double>(), 2) << "%] | "
           << (d.at("nss").get<bool>() ? "NSS" : "significant") << " |\n";
        flat("ab", metric + "_delta_pct", d.at("delta_pct"));
      }
      flat("ab", metric + "_nss", d.at("nss"));
    }
  }
  if (fs::exists(r / "bench.json")) {
    const auto j = read_json(r / "bench.json");
    md << "\n## Throughput\n\n| transport | decisions | decisions/s | p50 ms | p99 ms |\n|---|---|---|---|---|\n";
    for (const auto& b : j.at("results")) {
      md << "| " << b.at("transport").get<std::string>() << " | " << b.at("decisions").dump() << " | "
         << fmt(b.at("decisions_per_second").get<double>(), 1) << " | " << fmt(b.at("p50_ms").get<double>(), 3)
         << " | " << fmt(b.at("p99_ms").get<double>(), 3) << " |\n";
      flat("bench:" + b.at("transport").get<std::string>(), "decisions_per_second", b.at("decisions_per_second"));
    }
  }
  write_text(r / "summary.md", md.str());
  write_text(r / "summary.csv", csv.str());
  std::printf("%s", md.str().c_str());
  return kExitOk;
}

// Splits --block.key=value overrides out of argv.
std::vector<std::string> take_overrides(int argc, char** argv, std::vector<std::string>& rest) {
  std::vector<std::string> overrides;
  for (int i = 0; i < argc; ++i) {
    std::string a = argv[i];
    const auto eq = a.find('=');
    const auto dot = a.find('.');
    if (i > 0 && a.rfind("--", 0) == 0 && dot != std::string::npos && eq != std::string::npos && dot < eq) {
      overrides.push_back(a.substr(2));
    } else {
      rest.push_back(std::move(a));
    }
  }
  return overrides;
}

}  // namespace

int run(int argc, char** argv) {
  std::vector<std::string> args;
  const auto overrides = take_overrides(argc, argv, args);

  CLI::App app{"Decision Transformer notification decisions: simulate, train, serve and evaluate", "notifdt"};
  app.require_subcommand(1);
  std::string config_path;
  std::string run_dir;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "Run configuration (JSON)")->required();
    sub->add_option("--run-dir", run_dir, "Override the run directory");
  };
  auto* simulate = app.add_subcommand("simulate", "Generate behavior logs from the simulator");
  auto* segment = app.add_subcommand("segment", "Cut logs into training windows and split users");
  auto* train = app.add_subcommand("train", "Train the model");
  auto* eval = app.add_subcommand("eval", "Action accuracy and pinball loss on held-out windows");
  auto* serve = app.add_subcommand("serve", "Run the HTTP decision service");
  auto* sweep = app.add_subcommand("sweep", "Prompt-quantile sweep in the simulator");
  auto* ab = app.add_subcommand("ab", "Paired A/B comparison against a baseline policy");
  auto* admin = app.add_subcommand("store-admin", "Maintain the sequence store snapshot");
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the training loss gradient");
  auto* report = app.add_subcommand("report", "Summarize a run directory");
  for (auto* s : {simulate, segment, train, eval, serve, sweep, ab, admin, grad, report}) add_common(s);

  bool bench = false;
  double duration = 0;
  serve->add_flag("--bench", bench, "Measure throughput in-process and over HTTP, then exit");
  serve->add_option("--duration", duration, "Stop after this many seconds (0 = until signalled)");
  std::string admin_action;
  double days = 0;
  std::int64_t now_ms = 0;
  admin->add_option("action", admin_action, "clear | ttl")->required()->check(CLI::IsMember({"clear", "ttl"}));
  admin->add_option("--days", days, "TTL in days (default serving.ttl_days)");
  admin->add_option("--now-ms", now_ms, "Reference time for TTL eviction (default: wall clock)");
  std::size_t gc_d = 16, gc_t = 2;
  double gc_step = 1e-5;
  grad->add_option("--d-model", gc_d, "Model width for the check");
  grad->add_option("--context-length", gc_t, "Context length for the check");
  grad->add_option("--step", gc_step, "Central-difference step");
  std::vector<std::string> compare;
  report->add_option("--compare", compare, "Other run directories whose evaluation is tabulated against this one");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    json raw = read_config_file(config_path);
    for (const auto& o : overrides) apply_override(raw, o);
    if (!run_dir.empty()) raw["run_dir"] = run_dir;
    const RunConfig cfg = parse_run_config(raw);
    RunPaths paths{cfg.run_dir};

    if (report->parsed()) {
      if (!fs::exists(paths.root)) throw MissingArtifact("run directory " + paths.root.string() + " does not exist");
      return cmd_report(paths, compare);
    }
    paths.create();
    write_json(paths.resolved_config(), to_json(cfg));

    if (simulate->parsed()) return cmd_simulate(cfg, paths);
    if (segment->parsed()) return cmd_segment(cfg, paths);
    if (train->parsed()) return cmd_train(cfg, paths);
    if (eval->parsed()) return cmd_eval(cfg, paths);
    if (serve->parsed()) return cmd_serve(cfg, paths, bench, duration);
    if (sweep->parsed()) return cmd_sweep(cfg, paths);
    if (ab->parsed()) return cmd_ab(cfg, paths);
    if (admin->parsed()) return cmd_store_admin(cfg, paths, admin_action, days, now_ms);
    if (grad->parsed()) return cmd_gradcheck(cfg, gc_d, gc_t, gc_step);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const MissingArtifact& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace notifdt::cli
