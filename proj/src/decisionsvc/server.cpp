#include "notifdt/decisionsvc/server.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>
#include <thread>

#include "httplib.h"
#include "notifdt/common/errors.hpp"
#include "notifdt/common/rng.hpp"

namespace notifdt::svc {

namespace {

using Clock = std::chrono::steady_clock;

void send_error(httplib::Response& res, int status, const std::string& kind, const std::string& msg) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", msg}, {"kind", kind}}.dump(), "application/json");
}

double nearest_rank(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(k, 1, v.size()) - 1];
}

BenchResult finish_bench(std::string transport, std::span<const DecisionRequest> reqs, double seconds,
                         std::vector<double> lat) {
  BenchResult b;
  b.transport = std::move(transport);
  b.decisions = reqs.size();
  std::set<std::uint64_t> users;
  for (const auto& r : reqs) users.insert(r.user_id);
  b.users = users.size();
  b.seconds = seconds;
  b.decisions_per_second = seconds > 0 ? static_cast<double>(reqs.size()) / seconds : 0.0;
  b.p50_ms = nearest_rank(lat, 0.5);
  b.p99_ms = nearest_rank(std::move(lat), 0.99);
  return b;
}

}  // namespace

struct DecisionServer::Impl {
  DecisionService* service;
  httplib::Server server;
  std::thread thread;
};

DecisionServer::DecisionServer(DecisionService& service) : impl_(std::make_unique<Impl>()) {
  impl_->service = &service;
  auto& srv = impl_->server;
  srv.set_tcp_nodelay(true);
  DecisionService* svc = &service;

  srv.Post("/decide", [svc](const httplib::Request& req, httplib::Response& res) {
    DecisionRequest dr;
    try {
      dr = request_from_json(nlohmann::json::parse(req.body));
    } catch (const nlohmann::json::exception& e) {
      return send_error(res, 400, "malformed_request", e.what());
    } catch (const ContractError& e) {
      return send_error(res, 400, "malformed_request", e.what());
    }
    try {
      res.set_content(to_json(svc->decide(dr)).dump(), "application/json");
    } catch (const ContractError& e) {
      send_error(res, 400, "invalid_request", e.what());
    } catch (const ShapeError& e) {
      send_error(res, 400, "invalid_request", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  });

  srv.Post("/ingest", [svc](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto j = nlohmann::json::parse(req.body);
      const auto values = j.at("values").get<std::vector<double>>();
      svc->ingest_external_reward(j.at("user_id").get<std::uint64_t>(), values, j.at("mask").get<std::uint8_t>());
      res.set_content(R"({"ok":true})", "application/json");
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, "malformed_request", e.what());
    } catch (const ShapeError& e) {
      send_error(res, 400, "invalid_request", e.what());
    }
  });

  srv.Get("/health", [svc](const httplib::Request&, httplib::Response& res) {
    res.set_content(nlohmann::json{{"status", "ready"}, {"model_key", svc->options().model_key}}.dump(),
                    "application/json");
  });

  srv.Get("/metrics", [svc](const httplib::Request&, httplib::Response& res) {
    res.set_content(svc->metrics().to_text(), "text/plain; version=0.0.4");
  });
}

DecisionServer::~DecisionServer() { stop(); }

int DecisionServer::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("serve: cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void DecisionServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw IoError("serve: cannot listen on " + host + ":" + std::to_string(port));
}

void DecisionServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

nlohmann::json BenchResult::to_json() const {
  return {{"transport", transport},
          {"decisions", decisions},
          {"users", users},
          {"seconds", seconds},
          {"decisions_per_second", decisions_per_second},
          {"p50_ms", p50_ms},
          {"p99_ms", p99_ms}};
}

std::vector<DecisionRequest> bench_requests(const model::DTConfig& cfg, std::size_t n, std::size_t users,
                                            std::uint64_t seed) {
  if (users == 0) throw ContractError("bench: need at least one user");
  Rng rng(seed);
  std::vector<DecisionRequest> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = out[i];
    r.user_id = i % users;
    r.state.resize(cfg.state_dim);
    for (auto& v : r.state) v = rng.uniform();
    r.eas = EligibleActionSet{Action::kDontSend};
    if (rng.bernoulli(0.8)) r.eas.insert(Action::kSendBadge);
    if (rng.bernoulli(0.6)) r.eas.insert(Action::kSendPush);
    r.quality = r.state[0];
    r.timestamp_ms = 1'700'000'000'000 + static_cast<std::int64_t>(i) * 1000;
    r.prompt.alphas.assign(cfg.reward_dim, 0.5);
  }
  return out;
}

BenchResult bench_inprocess(DecisionService& service, std::span<const DecisionRequest> requests) {
  std::vector<double> lat;
  lat.reserve(requests.size());
  const auto t0 = Clock::now();
  for (const auto& r : requests) {
    const auto s = Clock::now();
    service.decide(r);
    lat.push_back(std::chrono::duration<double, std::milli>(Clock::now() - s).count());
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  return finish_bench("in-process", requests, secs, std::move(lat));
}

BenchResult bench_http(const std::string& host, int port, std::span<const DecisionRequest> requests) {
  httplib::Client cli(host, port);
  cli.set_keep_alive(true);
  cli.set_tcp_nodelay(true);
  std::vector<std::string> bodies;
  bodies.reserve(requests.size());
  for (const auto& r : requests) bodies.push_back(to_json(r).dump());
  std::vector<double> lat;
  lat.reserve(requests.size());
  const auto t0 = Clock::now();
  for (const auto& body : bodies) {
    const auto s = Clock::now();
    auto res = cli.Post("/decide", body, "application/json");
    if (!res || res->status != 200) {
      throw IoError("bench: /decide failed" + (res ? " with status " + std::to_string(res->status) : std::string()));
    }
    lat.push_back(std::chrono::duration<double, std::milli>(Clock::now() - s).count());
  }
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  return finish_bench("http", requests, secs, std::move(lat));
}

}  // namespace notifdt::svc
