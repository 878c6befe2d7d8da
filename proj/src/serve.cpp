#include "cgate/serve.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>

#include <fmt/format.h>

#include "cgate/error.hpp"
#include "cgate/log.hpp"
#include "cgate/synthgen.hpp"

namespace cgate::serve {

namespace {

constexpr std::size_t kMaxLine = 1 << 20;

using Clock = std::chrono::steady_clock;

}  // namespace

Json GateRequest::to_json() const {
  Json doc = {{"v", v}, {"id", id}, {"kind", to_string(kind)}, {"features", features.to_json()}};
  if (context) doc["context"] = *context;
  return doc;
}

GateRequest GateRequest::parse(std::string_view line) {
  Json doc;
  try {
    doc = Json::parse(line);
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, std::string("invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorCode::kParse, "request must be a JSON object");
  GateRequest r;
  try {
    r.v = doc.at("v").get<int>();
    r.id = doc.at("id").get<std::string>();
    const auto kind = doc.at("kind").get<std::string>();
    if (kind != "trigger" && kind != "filter") fail(ErrorCode::kParse, "kind must be trigger or filter");
    r.kind = task_from_string(kind);
    r.features = FeatureBag::from_json(doc.at("features"));
    if (auto it = doc.find("context"); it != doc.end() && !it->is_null()) r.context = it->get<std::string>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, std::string("bad request field: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::kParse, e.what());
  }
  if (r.v != kProtocolVersion) fail(ErrorCode::kParse, fmt::format("unsupported protocol version {}", r.v));
  return r;
}

Json GateResponse::to_json() const {
  return {{"v", v},
          {"id", id},
          {"pass", pass},
          {"score", score},
          {"threshold", real_to_json(threshold)},
          {"rule_hit", rule_hit ? Json(*rule_hit) : Json(nullptr)},
          {"latency_us", latency_us}};
}

GateResponse GateResponse::from_json(const Json& doc) {
  try {
    GateResponse r;
    r.v = doc.at("v").get<int>();
    r.id = doc.at("id").get<std::string>();
    r.pass = doc.at("pass").get<bool>();
    r.score = doc.at("score").get<double>();
    r.threshold = real_from_json(doc.at("threshold"));
    if (const auto& hit = doc.at("rule_hit"); !hit.is_null()) r.rule_hit = hit.get<std::string>();
    r.latency_us = doc.at("latency_us").get<std::int64_t>();
    return r;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed response: ") + e.what());
  }
}

Gate::Gate(Scorer trigger, Scorer filter, PolicyFile policy)
    : trigger_(std::move(trigger)), filter_(std::move(filter)), policy_(std::move(policy)) {
  if (trigger_.view() != View::kTrigger) fail(ErrorCode::kSchemaMismatch, "trigger model must use the trigger view");
  if (trigger_.schema_hash() != filter_.schema_hash()) {
    fail(ErrorCode::kSchemaMismatch, "trigger and filter models were trained on different schemas");
  }
  if (const auto& prov = policy_.provenance) {
    auto check = [](const std::string& expected, const std::string& actual, const char* which) {
      if (!expected.empty() && !actual.empty() && expected != actual) {
        fail(ErrorCode::kProvenance, fmt::format("policy was calibrated for a different {} model", which));
      }
    };
    check(prov->trigger_model_sha256, trigger_.sha256(), "trigger");
    check(prov->filter_model_sha256, filter_.sha256(), "filter");
  }
}

Gate Gate::load(const std::filesystem::path& trigger_model, const std::filesystem::path& filter_model,
                const std::filesystem::path& policy, const FeatureSchema& schema) {
  return Gate(Scorer::load(trigger_model, schema), Scorer::load(filter_model, schema), PolicyFile::load(policy));
}

GateResponse Gate::decide(const GateRequest& request) const {
  const Scorer& scorer = request.kind == Task::kTrigger ? trigger_ : filter_;
  const auto& schema = scorer.schema();
  const auto width = schema.view_size(view_of(request.kind));
  std::uint64_t unknown = 0;
  auto count = [&](const auto& map) {
    for (const auto& [name, value] : map) {
      const auto idx = schema.index_of(name);
      unknown += !idx || *idx >= width;
    }
  };
  count(request.features.scalars);
  count(request.features.categoricals);
  count(request.features.flags);
  if (unknown) unknown_.fetch_add(unknown, std::memory_order_relaxed);

  GateResponse r;
  r.id = request.id;
  r.score = scorer.score(request.features, request.context);
  if (request.kind == Task::kTrigger) {
    r.threshold = policy_.policy.trigger_threshold;
    r.pass = policy_.policy.trigger_passes(r.score);
  } else {
    r.threshold = policy_.policy.filter_threshold;
    bool compilable = true;
    if (auto it = request.features.flags.find("compilable"); it != request.features.flags.end() && it->second) {
      compilable = *it->second;
    }
    r.rule_hit = policy_.policy.rule_hit(compilable);
    r.pass = !r.rule_hit && policy_.policy.filter_passes(r.score);
  }
  return r;
}

std::string Gate::handle_line(std::string_view line) const {
  const auto start = Clock::now();
  try {
    const auto request = GateRequest::parse(line);
    auto response = decide(request);
    response.latency_us =
        std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - start).count();
    return response.to_json().dump();
  } catch (const Error& e) {
    Json err = {{"v", kProtocolVersion}, {"error", "bad_request"}, {"message", e.what()}};
    // Echo the id when the line was at least an object with one.
    try {
      const auto doc = Json::parse(line);
      if (doc.is_object() && doc.contains("id") && doc["id"].is_string()) err["id"] = doc["id"];
    } catch (const Json::exception&) {
    }
    return err.dump();
  }
}

// ---- sockets ----

namespace {

bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

sockaddr_in resolve(const std::string& host, int port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  const std::string h = host == "localhost" ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) != 1) {
    addrinfo hints{}, *res = nullptr;
    hints.ai_family = AF_INET;
    if (::getaddrinfo(h.c_str(), nullptr, &hints, &res) != 0 || !res) {
      fail(ErrorCode::kConnection, "cannot resolve host " + host);
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
  }
  return addr;
}

}  // namespace

Server::Server(const Gate& gate, std::string host, int port) : gate_(gate), host_(std::move(host)), port_(port) {}

Server::~Server() { stop(); }

void Server::start() {
  if (running_) return;
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) fail(ErrorCode::kConnection, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  auto addr = resolve(host_, port_);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(listen_fd_, 128) != 0) {
    const std::string why = std::strerror(errno);
    ::close(listen_fd_);
    listen_fd_ = -1;
    fail(ErrorCode::kConnection, fmt::format("cannot listen on {}:{}: {}", host_, port_, why));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
  logger().info("serving on {}:{}", host_, port_);
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
  listen_fd_ = -1;
}

void Server::accept_loop() {
  while (running_) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    set_nodelay(fd);
    std::lock_guard lock(mu_);
    if (!running_) {
      ::close(fd);
      break;
    }
    conn_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void Server::serve_connection(int fd) {
  std::string buffer;
  char chunk[16384];
  while (true) {
    const auto n = ::recv(fd, chunk, sizeof(chunk), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t start = 0, nl;
    std::string out;
    while ((nl = buffer.find('\n', start)) != std::string::npos) {
      std::string_view line(buffer.data() + start, nl - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (!line.empty()) {
        out += gate_.handle_line(line);
        out += '\n';
      }
      start = nl + 1;
    }
    buffer.erase(0, start);
    if (buffer.size() > kMaxLine) {
      out += Json{{"v", kProtocolVersion}, {"error", "bad_request"}, {"message", "line too long"}}.dump() + "\n";
      buffer.clear();
    }
    if (!out.empty() && !send_all(fd, out)) break;
  }
  std::lock_guard lock(mu_);
  conn_fds_.erase(std::remove(conn_fds_.begin(), conn_fds_.end(), fd), conn_fds_.end());
  ::close(fd);
}

Client::Client(const std::string& host, int port) {
  auto addr = resolve(host, port);
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) fail(ErrorCode::kConnection, std::string("socket: ") + std::strerror(errno));
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string why = std::strerror(errno);
    ::close(fd_);
    fd_ = -1;
    fail(ErrorCode::kConnection, fmt::format("cannot connect to {}:{}: {}", host, port, why));
  }
  set_nodelay(fd_);
}

Client::~Client() {
  if (fd_ >= 0) ::close(fd_);
}

std::string Client::round_trip(std::string_view line) {
  std::string msg(line);
  msg += '\n';
  if (!send_all(fd_, msg)) fail(ErrorCode::kConnection, "send failed");
  char chunk[16384];
  while (true) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string reply = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return reply;
    }
    const auto n = ::recv(fd_, chunk, sizeof(chunk), 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) fail(ErrorCode::kConnection, "connection closed by server");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::vector<GateRequest> bench_corpus(std::size_t n, std::uint64_t seed) {
  std::vector<GateRequest> out;
  if (n == 0) return out;
  auto world = synth::default_world();
  world.seed = seed;
  // About 180 events per user; the corpus cycles once the base runs out.
  world.user_count = static_cast<std::int64_t>(std::clamp<std::size_t>(n / 180 + 1, 2, 60));
  const auto generated = synth::generate(world);
  const auto joined = generated.dataset.joined();
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& [event, gen] = joined[(i / 2) % joined.size()];
    GateRequest r;
    r.id = fmt::format("r{}", i);
    r.kind = i % 2 == 0 ? Task::kTrigger : Task::kFilter;
    r.features = r.kind == Task::kTrigger ? event->trigger_features : gen->filter_features;
    r.context = event->context;
    out.push_back(std::move(r));
  }
  return out;
}

Json BenchResult::to_json() const {
  return {{"requests", requests},
          {"concurrency", concurrency},
          {"errors", errors},
          {"p50_us", real_to_json(p50_us)},
          {"p90_us", real_to_json(p90_us)},
          {"p99_us", real_to_json(p99_us)},
          {"max_us", real_to_json(max_us)},
          {"throughput_rps", throughput_rps}};
}

BenchResult bench(const std::string& host, int port, std::span<const GateRequest> corpus, int concurrency) {
  if (concurrency < 1) fail(ErrorCode::kConfig, "concurrency must be positive");
  BenchResult result;
  result.requests = corpus.size();
  result.concurrency = concurrency;
  if (corpus.empty()) return result;

  // Serialize up front so the timing covers only the round trip.
  std::vector<std::string> lines;
  lines.reserve(corpus.size());
  for (const auto& r : corpus) lines.push_back(r.to_json().dump());

  std::vector<std::unique_ptr<Client>> clients;
  for (int c = 0; c < concurrency; ++c) clients.push_back(std::make_unique<Client>(host, port));
  std::vector<double> latencies(corpus.size(), 0.0);
  std::atomic<std::size_t> errors{0};
  const auto t0 = Clock::now();
  std::vector<std::thread> threads;
  for (int c = 0; c < concurrency; ++c) {
    threads.emplace_back([&, c] {
      try {
        for (std::size_t i = static_cast<std::size_t>(c); i < lines.size(); i += static_cast<std::size_t>(concurrency)) {
          const auto s = Clock::now();
          const auto reply = clients[static_cast<std::size_t>(c)]->round_trip(lines[i]);
          latencies[i] = std::chrono::duration<double, std::micro>(Clock::now() - s).count();
          if (reply.find("\"error\"") != std::string::npos) errors.fetch_add(1);
        }
      } catch (const Error&) {
        errors.fetch_add(1);
      }
    });
  }
  for (auto& t : threads) t.join();
  const double wall = std::chrono::duration<double>(Clock::now() - t0).count();
  std::sort(latencies.begin(), latencies.end());
  auto rank = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::ceil(q * static_cast<double>(latencies.size()))) - 1;
    return latencies[std::min(idx, latencies.size() - 1)];
  };
  result.errors = errors.load();
  result.p50_us = rank(0.50);
  result.p90_us = rank(0.90);
  result.p99_us = rank(0.99);
  result.max_us = latencies.back();
  result.throughput_rps = wall > 0 ? static_cast<double>(corpus.size()) / wall : 0.0;
  return result;
}

}  // namespace cgate::serve
