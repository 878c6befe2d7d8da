#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cgate/calibrate.hpp"
#include "cgate/error.hpp"
#include "cgate/rng.hpp"
#include "oracles.hpp"

using namespace cgate;

namespace {

ScoredRecord rec(double trigger, double filter, bool positive, bool compilable = true) {
  ScoredRecord r;
  r.user_id = "u";
  r.trigger = trigger;
  r.filter = filter;
  r.outcome = positive ? Outcome::kAccepted : Outcome::kIgnored;
  r.compilable = compilable;
  r.completion_length = 10;
  return r;
}

// Scores weakly informative on both gates, ~8% positives, some non-compilable.
std::vector<ScoredRecord> random_records(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ScoredRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = rng.bernoulli(0.08);
    const double t = sigmoid(rng.normal(pos ? 0.8 : 0.0, 1.0));
    // Coarse filter scores create ties.
    const double f = std::round(sigmoid(rng.normal(pos ? 1.0 : 0.0, 1.0)) * 200) / 200;
    out.push_back(rec(t, f, pos, !rng.bernoulli(pos ? 0.02 : 0.15)));
  }
  return out;
}

std::int64_t count_below(const std::vector<double>& v, double t) {
  return std::count_if(v.begin(), v.end(), [&](double s) { return s < t; });
}

}  // namespace

TEST_CASE("threshold at a target FNR") {
  std::vector<double> pos;
  for (int i = 1; i <= 10; ++i) pos.push_back(i / 10.0);
  std::reverse(pos.begin(), pos.end());
  CHECK(threshold_at_fnr(pos, 0.10) == doctest::Approx(0.2));
  CHECK(count_below(pos, threshold_at_fnr(pos, 0.10)) == 1);
  CHECK(threshold_at_fnr(pos, 0.0) == doctest::Approx(0.1));
  CHECK(std::isinf(threshold_at_fnr(pos, 1.0)));
  CHECK(threshold_at_fnr(pos, 0.29) == doctest::Approx(0.3));
  CHECK_THROWS_AS(threshold_at_fnr(std::vector<double>{}, 0.1), Error);

  // Sort-and-count oracle: the threshold is the largest observed score (or
  // +inf) keeping strict-below positives within budget.
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s;
    const int n = 1 + static_cast<int>(rng.below(40));
    for (int i = 0; i < n; ++i) s.push_back(std::round(rng.uniform() * 20) / 20);
    const double target = rng.uniform();
    const auto budget = static_cast<std::int64_t>(std::floor(target * n + 1e-9));
    const double t = threshold_at_fnr(s, target);
    CHECK(count_below(s, t) <= budget);
    std::set<double> candidates(s.begin(), s.end());
    for (double c : candidates) {
      if (c > t) CHECK(count_below(s, c) > budget);
    }
    if (!std::isinf(t)) CHECK(candidates.count(t) == 1);
  }
}

TEST_CASE("combined FNR") {
  std::vector<ScoredRecord> rs = {rec(0.9, 0.9, true), rec(0.9, 0.1, true), rec(0.8, 0.8, true),
                                  rec(0.1, 0.1, false)};
  CHECK(combined_fnr(ThresholdPolicy::pass_all(), rs) == 0.0);
  ThresholdPolicy block_all;
  block_all.trigger_threshold = kInf;
  CHECK(combined_fnr(block_all, rs) == 1.0);
  ThresholdPolicy p;
  p.trigger_threshold = 0.5;
  p.filter_threshold = 0.5;
  // Positives: (0.9, 0.9) passes, (0.9, 0.1) filtered, (0.8, 0.8) passes.
  CHECK(combined_fnr(p, rs) == doctest::Approx(1.0 / 3.0));
  rs[2].compilable = false;
  p.hard_rules.block_non_compilable = true;
  const auto b = fn_breakdown(p, rs);
  CHECK(b.rule_fn == 1);
  CHECK(b.filter_fn == 1);
  CHECK(b.trigger_fn == 0);
  CHECK(combined_fnr(p, rs) == doctest::Approx(2.0 / 3.0));
  std::vector<ScoredRecord> negatives = {rec(0.2, 0.2, false)};
  CHECK_THROWS_AS(combined_fnr(p, negatives), Error);
}

TEST_CASE("zero grid point is filter-only calibration") {
  const auto rs = random_records(5000, 3);
  const std::vector<double> grid = {0.0};
  const auto pts = sweep_joint(rs, 0.10, grid);
  REQUIRE(pts.size() == 1);
  CHECK(pts[0].feasible);
  CHECK(pts[0].trigger_blocked == 0);
  std::vector<double> pos;
  for (const auto& r : rs) {
    if (r.positive()) pos.push_back(r.filter);
  }
  CHECK(pts[0].policy.filter_threshold == threshold_at_fnr(pos, 0.10));
}

TEST_CASE("adversarial trigger becomes infeasible past its budget") {
  // 1000 generations; the 100 lowest trigger scores are exactly the positives.
  std::vector<ScoredRecord> rs;
  for (int i = 0; i < 1000; ++i) rs.push_back(rec(i / 1000.0, 0.5, i < 100));
  std::vector<double> grid;
  for (double g = 0; g <= 5.0; g += 0.5) grid.push_back(g);
  const auto pts = sweep_joint(rs, 0.10, grid);
  for (const auto& pt : pts) {
    // Enumeration: the trigger blocks floor(g * 10) records, all positive.
    const auto blocked = static_cast<std::int64_t>(std::floor(pt.grid_pct * 10 + 1e-9));
    std::int64_t fn = 0;
    for (const auto& r : rs) fn += r.positive() && r.trigger < pt.policy.trigger_threshold;
    CHECK(fn == blocked);
    CHECK(pt.trigger_fn == blocked);
    CHECK(pt.feasible == (blocked <= 10));
  }
  CHECK(pts[2].feasible);       // g = 1%: exactly the budget
  CHECK_FALSE(pts[3].feasible);  // g = 1.5%
}

TEST_CASE("sweeps respect every target exactly") {
  const auto rs = random_records(20000, 7);
  const auto grid = default_grid();
  for (bool rules : {false, true}) {
    for (double target : {0.01, 0.05, 0.10, 0.20}) {
      CAPTURE(target);
      CAPTURE(rules);
      const auto pts = sweep_joint(rs, target, grid, HardRules{rules});
      REQUIRE(pts.size() == grid.size());
      std::set<double> trig(std::set<double>{}), filt;
      for (const auto& r : rs) {
        trig.insert(r.trigger);
        filt.insert(r.filter);
      }
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& pt = pts[i];
        CHECK(pt.grid_pct == grid[i]);
        CHECK((trig.count(pt.policy.trigger_threshold) == 1 || std::isinf(pt.policy.trigger_threshold)));
        if (i > 0) {
          CHECK(pt.trigger_blocked >= pts[i - 1].trigger_blocked);
          CHECK(pt.surviving_positives <= pts[i - 1].surviving_positives);
        }
        CHECK(pt.trigger_blocked <= static_cast<std::int64_t>(pt.grid_pct * rs.size() / 100.0 + 1e-9));
        if (!pt.feasible) continue;
        CHECK((filt.count(pt.policy.filter_threshold) == 1 || std::isinf(pt.policy.filter_threshold)));
        const auto b = fn_breakdown(pt.policy, rs);
        const auto allowed = static_cast<std::int64_t>(std::floor(target * b.positives + 1e-9));
        CHECK(b.total() <= allowed);
        CHECK(pt.realized_fnr <= target);
        CHECK(pt.realized_fnr == static_cast<double>(b.total()) / b.positives);
        // The filter threshold is maximal: the next observed score overspends.
        auto next = filt.upper_bound(pt.policy.filter_threshold);
        if (next != filt.end()) {
          auto tighter = pt.policy;
          tighter.filter_threshold = *next;
          CHECK(fn_breakdown(tighter, rs).total() > allowed);
        }
      }
    }
  }
  CHECK_THROWS_AS(sweep_joint(rs, 0.1, std::vector<double>{}), Error);
  CHECK_THROWS_AS(sweep_joint(rs, 0.1, std::vector<double>{100.0}), Error);
}

TEST_CASE("policy file round trip") {
  PolicyFile f;
  f.policy.trigger_threshold = 0.25;
  f.policy.filter_threshold = kInf;
  f.policy.hard_rules.block_non_compilable = true;
  f.provenance = PolicyProvenance{"aa", "bb", 0.1, 20, 0.0987};
  const auto dir = oracle::temp_dir("policy");
  f.save(dir / "policy.json");
  const auto back = PolicyFile::load(dir / "policy.json");
  CHECK(back.policy == f.policy);
  CHECK(back.provenance == f.provenance);
  write_file(dir / "bad.json", R"({"trigger_threshold": 1.5, "filter_threshold": 0})");
  CHECK_THROWS_AS(PolicyFile::load(dir / "bad.json"), Error);
  CHECK_THROWS_AS(PolicyFile::load(dir / "missing.json"), Error);
}
