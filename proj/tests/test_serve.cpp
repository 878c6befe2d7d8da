#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cmath>
#include <cstring>

#include "cgate/error.hpp"
#include "cgate/serve.hpp"
#include "cgate/synthgen.hpp"
#include "oracles.hpp"

using namespace cgate;
using namespace cgate::serve;

namespace {

struct Artifacts {
  std::filesystem::path dir, trigger, filter, policy;
  synth::GeneratedWorld world;
};

const Artifacts& artifacts() {
  static const Artifacts a = [] {
    Artifacts out;
    out.dir = oracle::temp_dir("serve");
    auto cfg = synth::default_world();
    cfg.user_count = 40;
    cfg.seed = 12;
    out.world = synth::generate(cfg);
    gbdt::TrainConfig tc;
    tc.trees = 30;
    tc.max_depth = 4;
    out.trigger = out.dir / "trigger.json";
    out.filter = out.dir / "filter.json";
    gbdt::save(train_gbdt(out.world.dataset, Task::kTrigger, tc), out.trigger);
    gbdt::save(train_gbdt(out.world.dataset, Task::kFilter, tc), out.filter);
    PolicyFile pf;
    pf.policy.trigger_threshold = 0.25;
    pf.policy.filter_threshold = 0.3;
    pf.policy.hard_rules.block_non_compilable = true;
    pf.provenance = PolicyProvenance{file_sha256_hex(out.trigger), file_sha256_hex(out.filter), 0.1, 0, 0.1};
    out.policy = out.dir / "policy.json";
    pf.save(out.policy);
    return out;
  }();
  return a;
}

Gate make_gate() {
  const auto& a = artifacts();
  return Gate::load(a.trigger, a.filter, a.policy, a.world.dataset.schema);
}

}  // namespace

TEST_CASE("decisions follow the policy and rules") {
  const auto gate = make_gate();
  const auto corpus = bench_corpus(400, 5);
  int passes = 0, blocks = 0;
  for (const auto& req : corpus) {
    const auto r = gate.decide(req);
    CHECK(r.id == req.id);
    CHECK(r.score > 0.0);
    CHECK(r.score < 1.0);
    CHECK(r.pass == (!r.rule_hit && r.score >= r.threshold));
    (r.pass ? passes : blocks)++;
  }
  CHECK(passes > 0);
  CHECK(blocks > 0);

  GateRequest f = corpus[1];
  REQUIRE(f.kind == Task::kFilter);
  f.features.set_flag("compilable", false);
  const auto r = gate.decide(f);
  CHECK_FALSE(r.pass);
  REQUIRE(r.rule_hit);
  CHECK(*r.rule_hit == "non_compilable");

  // A trigger request scoring over the threshold passes.
  for (const auto& req : corpus) {
    if (req.kind != Task::kTrigger) continue;
    const auto d = gate.decide(req);
    if (d.score >= 0.25) {
      CHECK(d.pass);
      CHECK(d.threshold == 0.25);
      break;
    }
  }
}

TEST_CASE("library and service decisions agree bit for bit") {
  const auto gate = make_gate();
  const auto& a = artifacts();
  const auto trigger = Scorer::load(a.trigger, a.world.dataset.schema);
  const auto filter = Scorer::load(a.filter, a.world.dataset.schema);
  const auto policy = PolicyFile::load(a.policy).policy;
  Server server(gate, "127.0.0.1", 0);
  server.start();
  Client client("127.0.0.1", server.port());
  const auto corpus = bench_corpus(1000, 9);
  for (const auto& req : corpus) {
    const auto resp = GateResponse::from_json(Json::parse(client.round_trip(req.to_json().dump())));
    const auto& scorer = req.kind == Task::kTrigger ? trigger : filter;
    const double score = scorer.score(req.features, req.context);
    bool pass = req.kind == Task::kTrigger ? policy.trigger_passes(score) : policy.filter_passes(score);
    if (req.kind == Task::kFilter) {
      auto it = req.features.flags.find("compilable");
      if (it != req.features.flags.end() && it->second && !*it->second) pass = false;
    }
    CHECK(resp.id == req.id);
    CHECK(resp.score == score);
    CHECK(resp.pass == pass);
    CHECK(resp.latency_us >= 0);
  }
  server.stop();
}

TEST_CASE("malformed lines get an error and the connection survives") {
  const auto gate = make_gate();
  Server server(gate, "127.0.0.1", 0);
  server.start();
  Client client("127.0.0.1", server.port());
  const auto bad = Json::parse(client.round_trip("{{{"));
  CHECK(bad["error"] == "bad_request");
  const auto wrong_version = Json::parse(client.round_trip(R"({"v":9,"id":"x","kind":"trigger","features":{}})"));
  CHECK(wrong_version["error"] == "bad_request");
  CHECK(wrong_version["id"] == "x");
  const auto bad_kind = Json::parse(client.round_trip(R"({"v":1,"id":"y","kind":"both","features":{}})"));
  CHECK(bad_kind["error"] == "bad_request");
  const auto ok = Json::parse(client.round_trip(R"({"v":1,"id":"z","kind":"trigger","features":{}})"));
  CHECK(ok["id"] == "z");
  CHECK(ok.contains("pass"));
  CHECK(ok["rule_hit"].is_null());

  // Unknown names are ignored and counted; a filter-only name is unknown to the trigger view.
  const auto before = gate.unknown_features();
  const auto u = Json::parse(client.round_trip(
      R"({"v":1,"id":"u","kind":"trigger","features":{"scalars":{"brand_new":1.0,"mean_logprob":-0.2},"categoricals":{},"flags":{}}})"));
  CHECK(u["score"] == ok["score"]);
  CHECK(gate.unknown_features() == before + 2);
  server.stop();
}

TEST_CASE("pipelined requests come back in order") {
  const auto gate = make_gate();
  Server server(gate, "127.0.0.1", 0);
  server.start();
  const auto corpus = bench_corpus(200, 2);
  std::string batch;
  for (const auto& r : corpus) batch += r.to_json().dump() + "\n";
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(server.port()));
  ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
  REQUIRE(::send(fd, batch.data(), batch.size(), 0) == static_cast<ssize_t>(batch.size()));
  std::string received;
  char buf[8192];
  while (std::count(received.begin(), received.end(), '\n') < static_cast<long>(corpus.size())) {
    const auto n = ::recv(fd, buf, sizeof(buf), 0);
    REQUIRE(n > 0);
    received.append(buf, static_cast<std::size_t>(n));
  }
  ::close(fd);
  std::size_t pos = 0;
  for (const auto& r : corpus) {
    const auto nl = received.find('\n', pos);
    CHECK(Json::parse(received.substr(pos, nl - pos))["id"] == r.id);
    pos = nl + 1;
  }
  server.stop();
}

TEST_CASE("startup refuses mismatched artifacts") {
  const auto& a = artifacts();
  auto pf = PolicyFile::load(a.policy);
  pf.provenance->trigger_model_sha256 = std::string(64, '0');
  pf.save(a.dir / "stale_policy.json");
  try {
    Gate::load(a.trigger, a.filter, a.dir / "stale_policy.json", a.world.dataset.schema);
    FAIL("expected provenance error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kProvenance);
  }
  // Filter model in the trigger slot.
  CHECK_THROWS_AS(Gate::load(a.filter, a.filter, a.dir / "stale_policy.json", a.world.dataset.schema), Error);
  auto entries = a.world.dataset.schema.entries();
  entries[0].unit = "changed";
  const FeatureSchema other("x", entries);
  try {
    Gate::load(a.trigger, a.filter, a.policy, other);
    FAIL("expected schema error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSchemaMismatch);
  }
}

TEST_CASE("bench corpus and harness") {
  CHECK(bench_corpus(0, 1).empty());
  const auto a = bench_corpus(300, 4), b = bench_corpus(300, 4);
  REQUIRE(a.size() == 300);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].to_json() == b[i].to_json());
  CHECK(bench_corpus(300, 5)[0].to_json() != a[0].to_json());

  const auto gate = make_gate();
  Server server(gate, "127.0.0.1", 0);
  server.start();
  const auto empty = bench("127.0.0.1", server.port(), {}, 8);
  CHECK(empty.requests == 0);
  CHECK(std::isnan(empty.p99_us));
  const auto res = bench("127.0.0.1", server.port(), a, 4);
  CHECK(res.requests == 300);
  CHECK(res.errors == 0);
  CHECK(res.p50_us <= res.p90_us);
  CHECK(res.p90_us <= res.p99_us);
  CHECK(res.p99_us <= res.max_us);
  CHECK(res.throughput_rps > 0);
  server.stop();

  try {
    Client c("127.0.0.1", server.port());
    FAIL("expected connection error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConnection);
  }
}
