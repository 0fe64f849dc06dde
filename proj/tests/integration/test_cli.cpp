#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "notifdt/cli/commands.hpp"
#include "notifdt/cli/run_config.hpp"
#include "notifdt/common/errors.hpp"
#include "notifdt/seqstore/store.hpp"

using namespace notifdt;
using namespace notifdt::cli;
namespace fs = std::filesystem;

namespace {

const fs::path kDefaultConfig = fs::path(NOTIFDT_SOURCE_DIR) / "configs" / "default.json";

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "notifdt");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return run(static_cast<int>(argv.size()), argv.data());
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("notifdt_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small enough for a unit-test budget.
std::vector<std::string> tiny(const fs::path& dir) {
  return {"-c",
          kDefaultConfig.string(),
          "--run-dir",
          dir.string(),
          "--simulator.users=12",
          "--simulator.steps=30",
          "--model.d_model=16",
          "--model.mlp_hidden=32",
          "--model.quantile_hidden=16",
          "--model.gate_width=16",
          "--training.epochs=1",
          "--evaluation.users=5",
          "--evaluation.steps=10",
          "--evaluation.seeds=[1]",
          "--evaluation.bootstrap_samples=50",
          "--serving.port=0"};
}

int stage(const std::string& cmd, const fs::path& dir, std::vector<std::string> extra = {}) {
  auto args = tiny(dir);
  args.insert(args.begin(), cmd);
  args.insert(args.end(), extra.begin(), extra.end());
  return invoke(args);
}

}  // namespace

TEST_CASE("missing config exits with 2") {
  CHECK(invoke({"train", "-c", "/nonexistent/missing.cfg"}) == kExitConfig);
  CHECK(invoke({"train"}) == kExitConfig);
  CHECK(invoke({"no-such-command", "-c", kDefaultConfig.string()}) == kExitConfig);
}

TEST_CASE("config errors exit with 2") {
  const auto dir = scratch("cfg");
  CHECK(invoke({"simulate", "-c", kDefaultConfig.string(), "--run-dir", dir.string(), "--model.bogus=1"}) == kExitConfig);
  CHECK(invoke({"simulate", "-c", kDefaultConfig.string(), "--run-dir", dir.string(), "--nosuchblock.x=1"}) ==
        kExitConfig);
  CHECK(invoke({"simulate", "-c", kDefaultConfig.string(), "--run-dir", dir.string(), "--model.T=8"}) == kExitConfig);
  CHECK(invoke({"simulate", "-c", kDefaultConfig.string(), "--run-dir", dir.string(), "--serving.alphas=[0.5]"}) ==
        kExitConfig);
  CHECK(invoke({"simulate", "-c", kDefaultConfig.string(), "--run-dir", dir.string(), "--simulator.warp=1"}) ==
        kExitConfig);
}

TEST_CASE("resolved config re-parses to the same configuration") {
  auto raw = read_config_file(kDefaultConfig);
  apply_override(raw, "model.action_head=s+R");
  apply_override(raw, "serving.rtg_override=[1, 2, 3]");
  const RunConfig a = parse_run_config(raw);
  CHECK(a.model.action_head == model::ActionHeadMode::kStateAndReturn);
  const RunConfig b = parse_run_config(to_json(a));
  CHECK(to_json(a) == to_json(b));
  CHECK(a.model == b.model);
  CHECK(a.simulator.params == b.simulator.params);
  // Shared keys omitted from the model block follow the pipeline.
  apply_override(raw, "pipeline.T=2");
  CHECK(parse_run_config(raw).model.context_length == 2);
}

TEST_CASE("gradcheck on the default config") { CHECK(invoke({"gradcheck", "-c", kDefaultConfig.string()}) == kExitOk); }

TEST_CASE("stages out of order name the missing artifact") {
  const auto dir = scratch("order");
  CHECK(stage("eval", dir) == kExitConfig);
  CHECK(stage("segment", dir) == kExitConfig);
  CHECK(stage("store-admin", dir, {"clear"}) == kExitConfig);
  CHECK(invoke({"report", "-c", kDefaultConfig.string(), "--run-dir", dir.string()}) == kExitConfig);
  CHECK(invoke({"report", "-c", kDefaultConfig.string(), "--run-dir", (dir / "absent").string()}) == kExitConfig);
}

TEST_CASE("full chain is reproducible and reported") {
  const auto a = scratch("chain_a"), b = scratch("chain_b");
  for (const auto& dir : {a, b}) {
    for (const char* cmd : {"simulate", "segment", "train", "eval", "sweep", "ab"}) {
      INFO(cmd);
      REQUIRE(stage(cmd, dir) == kExitOk);
    }
  }
  for (const char* f : {"logs/interactions.csv", "datasets/train.ndtd", "datasets/validation.ndtd",
                        "checkpoints/model.ckpt", "logs/train_history.jsonl", "reports/eval.json", "reports/sweep.csv",
                        "reports/sweep.json", "reports/ab.json"}) {
    INFO(f);
    CHECK(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  auto ra = nlohmann::json::parse(slurp(a / "config.resolved.json"));
  auto rb = nlohmann::json::parse(slurp(b / "config.resolved.json"));
  CHECK(ra["run_dir"] == a.string());
  ra.erase("run_dir");
  rb.erase("run_dir");
  CHECK(ra == rb);
  CHECK(parse_run_config(ra).simulator.users == 12);

  REQUIRE(stage("report", a, {"--compare", b.string()}) == kExitOk);
  const std::string summary = slurp(a / "reports" / "summary.md");
  CHECK(summary.find("action_accuracy") != std::string::npos);
  CHECK(summary.find("pinball_loss") != std::string::npos);
  CHECK(summary.find("## Prompt sweep") != std::string::npos);
  CHECK(summary.find("Click prompt strictly increasing across rows:") != std::string::npos);
  CHECK(summary.find("## A/B") != std::string::npos);
  CHECK((summary.find("NSS") != std::string::npos || summary.find("significant") != std::string::npos));
  CHECK(summary.find("+0.000 pp") != std::string::npos);
  CHECK(fs::exists(a / "reports" / "summary.csv"));
}

TEST_CASE("serve, bench and store maintenance") {
  const auto dir = scratch("serve");
  for (const char* cmd : {"simulate", "segment", "train"}) REQUIRE(stage(cmd, dir) == kExitOk);
  CHECK(stage("serve", dir, {"--bench", "--serving.bench_decisions=50", "--serving.bench_users=5"}) == kExitOk);
  CHECK(fs::exists(dir / "reports" / "bench.json"));
  CHECK(stage("serve", dir, {"--duration", "0.2"}) == kExitOk);
  REQUIRE(fs::exists(dir / "store" / "snapshot.ndts"));

  store::SequenceStore st(16);
  store::SlotRecord old_rec, new_rec;
  old_rec.timestamp_ms = 1'000;
  old_rec.strings = {"default"};
  new_rec.timestamp_ms = 10'000'000'000;
  new_rec.strings = {"default"};
  st.write_partial(1, old_rec);
  st.write_partial(1, new_rec);
  st.save_snapshot(dir / "store" / "snapshot.ndts");
  CHECK(stage("store-admin", dir, {"ttl", "--days", "1", "--now-ms", "10000000001"}) == kExitOk);
  CHECK(store::SequenceStore::load_snapshot(dir / "store" / "snapshot.ndts").occupancy(1) == 1);
  CHECK(stage("store-admin", dir, {"clear"}) == kExitOk);
  CHECK(store::SequenceStore::load_snapshot(dir / "store" / "snapshot.ndts").total_occupancy() == 0);
  // Clearing resets monotonicity, so older timestamps are accepted again.
  auto cleared = store::SequenceStore::load_snapshot(dir / "store" / "snapshot.ndts");
  CHECK_NOTHROW(cleared.write_partial(1, old_rec));
}
