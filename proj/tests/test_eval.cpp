#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include <fmt/format.h>

#include "cgate/error.hpp"
#include "cgate/eval.hpp"
#include "cgate/rng.hpp"
#include "oracles.hpp"

using namespace cgate;

namespace {

ScoredRecord rec(Outcome outcome, std::uint32_t length, double trigger = 0.5, double filter = 0.5,
                 bool compilable = true) {
  ScoredRecord r;
  r.user_id = "u1";
  r.trigger = trigger;
  r.filter = filter;
  r.outcome = outcome;
  r.compilable = compilable;
  r.completion_length = length;
  return r;
}

std::vector<ScoredRecord> random_fixture(Rng& rng, std::size_t n) {
  static const Outcome outcomes[] = {Outcome::kNotShown, Outcome::kAccepted, Outcome::kExplicitCancel,
                                     Outcome::kIgnored};
  std::vector<ScoredRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(rec(outcomes[rng.below(4)], static_cast<std::uint32_t>(rng.below(60)),
                      std::round(rng.uniform() * 10) / 10, std::round(rng.uniform() * 10) / 10,
                      !rng.bernoulli(0.2)));
  }
  return out;
}

// Enumerates events one by one against the written-out rule.
MetricsReport brute_force(const std::vector<ScoredRecord>& rs, const ThresholdPolicy& p) {
  MetricsReport m;
  std::int64_t blocked = 0;
  for (const auto& r : rs) {
    const bool trig = r.trigger >= p.trigger_threshold;
    if (!trig) {
      ++blocked;
      continue;
    }
    m.generations += 1;
    const bool rules_ok = !(p.hard_rules.block_non_compilable && !r.compilable);
    const bool shown = r.outcome != Outcome::kNotShown && rules_ok && r.filter >= p.filter_threshold;
    if (!shown) continue;
    m.shown += 1;
    if (r.outcome == Outcome::kAccepted) {
      m.accepted += 1;
      m.symbols_completed += r.completion_length;
    }
    if (r.outcome == Outcome::kExplicitCancel) m.explicit_cancels += 1;
  }
  m.accept_rate = m.shown ? double(m.accepted) / double(m.shown) : kNaN;
  m.cancel_rate = m.shown ? double(m.explicit_cancels) / double(m.shown) : kNaN;
  m.generations_filtered_pct = rs.empty() ? 0.0 : 100.0 * double(blocked) / double(rs.size());
  return m;
}

bool close_or_both_nan(double a, double b) {
  return (std::isnan(a) && std::isnan(b)) || std::abs(a - b) <= 1e-12;
}

// Builds a replayable dataset: each user gets `per_user` shown generations.
Dataset make_arm(std::size_t users, std::size_t per_user, double accept, double cancel, Rng& rng,
                 const std::string& prefix) {
  Dataset d;
  d.schema = FeatureSchema("ab", {{"x", FeatureKind::kScalar, Stage::kTrigger, "", {}}});
  for (std::size_t u = 0; u < users; ++u) {
    const std::string uid = fmt::format("{}{:04}", prefix, u);
    // Per-user heterogeneity on the accept rate.
    const double ua = std::clamp(accept * std::exp(rng.normal(0, 0.25)), 0.0, 0.95);
    for (std::size_t i = 0; i < per_user; ++i) {
      CompletionEvent e;
      e.event_id = fmt::format("{}-e{:04}", uid, i);
      e.user_id = uid;
      e.session_id = uid + "-s";
      e.timestamp_ms = static_cast<std::int64_t>(i);
      e.language = "kotlin";
      GenerationRecord g;
      g.event_id = e.event_id;
      g.completion_length = 5 + static_cast<std::uint32_t>(rng.below(30));
      const double u01 = rng.uniform();
      g.outcome = u01 < ua ? Outcome::kAccepted : (u01 < ua + cancel ? Outcome::kExplicitCancel : Outcome::kIgnored);
      d.events.push_back(e);
      d.generations.push_back(g);
    }
  }
  d.manifest = dataset_stats(d.events, d.generations, d.schema);
  return d;
}

}  // namespace

TEST_CASE("hand-enumerated five-event replay") {
  // 2 accepted (lengths 10, 20), 1 cancel, 2 ignored; the filter blocks only the cancel.
  std::vector<ScoredRecord> rs = {rec(Outcome::kAccepted, 10, 0.9, 0.9), rec(Outcome::kAccepted, 20, 0.9, 0.8),
                                  rec(Outcome::kExplicitCancel, 7, 0.9, 0.1), rec(Outcome::kIgnored, 3, 0.9, 0.7),
                                  rec(Outcome::kIgnored, 4, 0.9, 0.6)};
  ThresholdPolicy p;
  p.trigger_threshold = 0.5;
  p.filter_threshold = 0.5;
  const auto m = replay(rs, p);
  CHECK(m.shown == 4);
  CHECK(m.accept_rate == 0.5);
  CHECK(m.cancel_rate == 0.0);
  CHECK(m.symbols_completed == 30);
  CHECK(m.generations == 5);
  CHECK(m.generations_filtered_pct == 0.0);
}

TEST_CASE("negative-only filtering lifts the accept rate") {
  std::vector<ScoredRecord> rs;
  for (int i = 0; i < 100; ++i) rs.push_back(rec(i < 31 ? Outcome::kAccepted : Outcome::kIgnored, 10, 0.5, i < 31 ? 0.8 : (i < 60 ? 0.2 : 0.9)));
  const auto raw = replay(rs, ThresholdPolicy::pass_all());
  CHECK(raw.accept_rate == doctest::Approx(0.31));
  ThresholdPolicy p;
  p.filter_threshold = 0.5;
  const auto m = replay(rs, p);
  CHECK(m.accept_rate > 0.31);
  CHECK(m.accepted == 31);
  CHECK(m.symbols_completed == raw.symbols_completed);
}

TEST_CASE("replay matches brute-force enumeration") {
  Rng rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const auto rs = random_fixture(rng, 20);
    ThresholdPolicy p;
    p.trigger_threshold = std::round(rng.uniform() * 10) / 10;
    p.filter_threshold = std::round(rng.uniform() * 10) / 10;
    p.hard_rules.block_non_compilable = rng.bernoulli(0.5);
    const auto got = replay(rs, p);
    const auto want = brute_force(rs, p);
    CHECK(got.shown == want.shown);
    CHECK(got.accepted == want.accepted);
    CHECK(got.explicit_cancels == want.explicit_cancels);
    CHECK(got.symbols_completed == want.symbols_completed);
    CHECK(got.generations == want.generations);
    CHECK(close_or_both_nan(got.accept_rate, want.accept_rate));
    CHECK(close_or_both_nan(got.cancel_rate, want.cancel_rate));
    CHECK(close_or_both_nan(got.generations_filtered_pct, want.generations_filtered_pct));
  }
}

TEST_CASE("pass-all replay reproduces the raw log") {
  Rng rng(5);
  auto d = make_arm(30, 40, 0.3, 0.1, rng, "u");
  // Sprinkle unshown generations.
  for (std::size_t i = 0; i < d.generations.size(); i += 3) d.generations[i].outcome = Outcome::kNotShown;
  std::vector<double> t(d.generations.size()), f(d.generations.size());
  for (auto& v : t) v = rng.uniform();
  for (auto& v : f) v = rng.uniform();
  const auto rs = attach_scores(d, t, f);
  CHECK(replay(rs, ThresholdPolicy::pass_all()) == raw_metrics(d));
  const auto stats = dataset_stats(d.events, d.generations, d.schema);
  const auto raw = raw_metrics(d);
  CHECK(raw.generations == stats.generation_count);
  CHECK(static_cast<double>(raw.shown - raw.accepted) / static_cast<double>(raw.accepted) ==
        doctest::Approx(stats.label_imbalance_filter));

  // Raising the filter threshold never shows more or completes more.
  std::int64_t prev_shown = INT64_MAX, prev_symbols = INT64_MAX;
  for (double th = 0.0; th <= 1.0; th += 0.05) {
    ThresholdPolicy p;
    p.filter_threshold = th;
    const auto m = replay(rs, p);
    CHECK(m.shown <= prev_shown);
    CHECK(m.symbols_completed <= prev_symbols);
    prev_shown = m.shown;
    prev_symbols = m.symbols_completed;
  }

  d.manifest.gated = true;
  try {
    require_replayable(d);
    FAIL("expected provenance error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kProvenance);
  }
}

TEST_CASE("curves, TSV and SVG") {
  Rng rng(8);
  std::vector<ScoredRecord> rs;
  for (int i = 0; i < 4000; ++i) {
    const double z = rng.normal();
    const bool shown = rng.bernoulli(0.4);
    const double pa = sigmoid(z - 0.5);
    const double u01 = rng.uniform();
    Outcome o = !shown ? Outcome::kNotShown
                       : (u01 < pa ? Outcome::kAccepted : (u01 < pa + 0.3 * (1 - pa) * (1 - pa) ? Outcome::kExplicitCancel : Outcome::kIgnored));
    rs.push_back(rec(o, 5 + static_cast<std::uint32_t>(rng.below(40)), sigmoid(z + rng.normal()),
                     sigmoid(z + 0.5 * rng.normal())));
  }
  const auto grid = default_grid();
  const auto sweep = sweep_joint(rs, 0.1, grid);
  const auto curve = build_curve(rs, sweep, 0.1);
  REQUIRE(curve.points.size() == grid.size());
  ThresholdPolicy filter_only = sweep[0].policy;
  CHECK(curve.points[0].metrics == replay(rs, filter_only));
  const auto all = replay(rs, ThresholdPolicy::pass_all());
  for (std::size_t i = 0; i < curve.points.size(); ++i) {
    const auto& p = curve.points[i];
    if (!p.feasible) continue;
    CHECK(p.metrics.symbols_completed <= all.symbols_completed);
    CHECK(p.realized_fnr <= 0.1);
    if (i > 0 && p.grid_pct <= 20 && curve.points[i - 1].feasible) {
      CHECK(p.metrics.cancel_rate <= curve.points[i - 1].metrics.cancel_rate + 0.01);
    }
  }

  const auto dir = oracle::temp_dir("curve");
  export_curve(curve, dir / "c.tsv");
  CHECK(parse_curve(dir / "c.tsv") == curve_rows(curve));
  export_curve(TradeoffCurve{}, dir / "empty.tsv");
  CHECK(read_file(dir / "empty.tsv") == std::string(kCurveHeader) + "\n");
  CHECK(parse_curve(dir / "empty.tsv").empty());
  write_file(dir / "bad.tsv", "nope\n");
  CHECK_THROWS_AS(parse_curve(dir / "bad.tsv"), Error);

  const auto rows = curve_rows(curve);
  plot_curve(rows, dir / "c.svg", "fnr <= 0.10 & more");
  boost::property_tree::ptree tree;
  std::istringstream in(read_file(dir / "c.svg"));
  REQUIRE_NOTHROW(boost::property_tree::read_xml(in, tree));
  int polylines = 0;
  for (const auto& child : tree.get_child("svg")) polylines += child.first == "polyline";
  CHECK(polylines == 3);

  std::vector<SweepPoint> none = {sweep.back()};
  none[0].feasible = false;
  CHECK_THROWS_AS(build_curve(rs, none, 0.1), Error);
}

TEST_CASE("bootstrap null and planted shift") {
  Rng rng(77);
  const auto a = make_arm(150, 30, 0.3, 0.1, rng, "a");
  const auto names = ab_metric_names();
  AbOptions opt;
  opt.resamples = 1000;
  opt.seed = 3;
  const auto same = ab_compare(a, a, names, opt);
  REQUIRE(same.size() == names.size());
  for (const auto& r : same) {
    CHECK(r.point_delta_pct == 0.0);
    CHECK_FALSE(r.significant);
    CHECK(r.ci_low_pct <= r.point_delta_pct);
    CHECK(r.point_delta_pct <= r.ci_high_pct);
  }

  const auto b = make_arm(127, 30, 0.42, 0.06, rng, "b");
  const auto shifted = ab_compare(a, b, names, opt);
  const auto& ar = shifted[0];
  CHECK(ar.metric == "accept_rate");
  CHECK(ar.significant);
  CHECK(ar.point_delta_pct > 0);
  CHECK(ar.ci_low_pct <= ar.point_delta_pct);
  CHECK(ar.point_delta_pct <= ar.ci_high_pct);
  CHECK(shifted[1].point_delta_pct < 0);
  CHECK(ab_compare(a, b, names, opt)[0].ci_low_pct == ar.ci_low_pct);

  opt.pooled = true;
  const auto pooled = ab_compare(a, b, names, opt);
  CHECK(pooled[0].significant);
  const auto report = ab_report_json(pooled, opt);
  CHECK(report["results"].size() == names.size());
  CHECK(report["aggregation"] == "pooled");

  // An arm with nothing shown drops the rate metrics but keeps counts.
  auto dark = a;
  for (auto& g : dark.generations) g.outcome = Outcome::kNotShown;
  const auto partial = ab_compare(dark, b, names, opt);
  for (const auto& r : partial) {
    CHECK(r.metric != "accept_rate");
    CHECK(r.metric != "cancel_rate");
  }
  auto tiny = make_arm(1, 5, 0.3, 0.1, rng, "t");
  CHECK_THROWS_AS(ab_compare(tiny, b, names, opt), Error);
  const std::vector<std::string> unknown = {"rocc"};
  CHECK_THROWS_AS(ab_compare(a, b, unknown, opt), Error);
}
