#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "json.hpp"
#include "notifdt/decisionsvc/service.hpp"

namespace notifdt::svc {

// HTTP front end for a DecisionService.
//   POST /decide   JSON DecisionRequest -> JSON DecisionResponse
//   POST /ingest   {"user_id", "values", "mask"}
//   GET  /health   {"status": "ready"}
//   GET  /metrics  exposition text (ServiceMetrics::to_text)
// Malformed or invalid bodies get a 400 with {"error", "kind"}; the
// connection stays usable.
class DecisionServer {
 public:
  explicit DecisionServer(DecisionService& service);
  ~DecisionServer();
  DecisionServer(const DecisionServer&) = delete;
  DecisionServer& operator=(const DecisionServer&) = delete;

  // Binds and serves on a background thread. Port 0 picks a free port.
  // Returns the bound port; throws IoError when binding fails.
  int start(const std::string& host, int port);
  // Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct BenchResult {
  std::string transport;
  std::size_t decisions = 0;
  std::size_t users = 0;
  double seconds = 0;
  double decisions_per_second = 0;
  double p50_ms = 0;
  double p99_ms = 0;

  nlohmann::json to_json() const;
};

// Synthetic request stream: users round-robin, uniform states, random
// eligible sets that always include DontSend, learned prompt at the median.
std::vector<DecisionRequest> bench_requests(const model::DTConfig& cfg, std::size_t n, std::size_t users,
                                            std::uint64_t seed);

BenchResult bench_inprocess(DecisionService& service, std::span<const DecisionRequest> requests);
// Sequential requests over one keep-alive connection.
BenchResult bench_http(const std::string& host, int port, std::span<const DecisionRequest> requests);

}  // namespace notifdt::svc
