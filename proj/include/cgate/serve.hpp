#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cgate/calibrate.hpp"
#include "cgate/scoring.hpp"

namespace cgate::serve {

inline constexpr int kProtocolVersion = 1;

struct GateRequest {
  int v = kProtocolVersion;
  std::string id;
  Task kind = Task::kTrigger;
  FeatureBag features;
  std::optional<std::string> context;

  Json to_json() const;
  // Throws Error(kParse) on anything malformed.
  static GateRequest parse(std::string_view line);
};

struct GateResponse {
  int v = kProtocolVersion;
  std::string id;
  bool pass = false;
  double score = 0.0;
  double threshold = 0.0;
  std::optional<std::string> rule_hit;
  std::int64_t latency_us = 0;

  Json to_json() const;
  static GateResponse from_json(const Json& doc);
};

// Decision logic shared by the socket server and in-process callers.
// Immutable after construction apart from the unknown-feature counter.
class Gate {
 public:
  // Refuses mismatched schemas, views, or a policy whose provenance names
  // different model files.
  Gate(Scorer trigger, Scorer filter, PolicyFile policy);
  static Gate load(const std::filesystem::path& trigger_model, const std::filesystem::path& filter_model,
                   const std::filesystem::path& policy, const FeatureSchema& schema);

  GateResponse decide(const GateRequest& request) const;
  // One request line in, one response line out (no trailing newline).
  std::string handle_line(std::string_view line) const;

  const ThresholdPolicy& policy() const { return policy_.policy; }
  const Scorer& trigger() const { return trigger_; }
  const Scorer& filter() const { return filter_; }
  std::uint64_t unknown_features() const { return unknown_.load(std::memory_order_relaxed); }

 private:
  Scorer trigger_;
  Scorer filter_;
  PolicyFile policy_;
  mutable std::atomic<std::uint64_t> unknown_{0};
};

// Newline-delimited JSON over TCP, one thread per connection.
class Server {
 public:
  Server(const Gate& gate, std::string host, int port);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start();
  void stop();
  int port() const { return port_; }
  const std::string& host() const { return host_; }

 private:
  void accept_loop();
  void serve_connection(int fd);

  const Gate& gate_;
  std::string host_;
  int port_ = 0;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<int> conn_fds_;
  std::vector<std::thread> workers_;
};

// Blocking line-oriented client.
class Client {
 public:
  Client(const std::string& host, int port);
  ~Client();
  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  std::string round_trip(std::string_view line);

 private:
  int fd_ = -1;
  std::string buffer_;
};

// Deterministic request corpus drawn from a generated world; alternates
// trigger and filter requests.
std::vector<GateRequest> bench_corpus(std::size_t n, std::uint64_t seed);

struct BenchResult {
  std::size_t requests = 0;
  int concurrency = 0;
  std::size_t errors = 0;
  double p50_us = kNaN, p90_us = kNaN, p99_us = kNaN, max_us = kNaN;
  double throughput_rps = 0.0;

  Json to_json() const;
};

BenchResult bench(const std::string& host, int port, std::span<const GateRequest> corpus, int concurrency);

}  // namespace cgate::serve
