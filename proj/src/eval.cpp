#include "cgate/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "cgate/error.hpp"
#include "cgate/log.hpp"
#include "cgate/rng.hpp"
#include "cgate/scoring.hpp"

namespace cgate {

namespace {

bool same_real(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

double ratio(std::int64_t num, std::int64_t den) {
  return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : kNaN;
}

}  // namespace

Json MetricsReport::to_json() const {
  return {{"symbols_completed", symbols_completed},
          {"shown", shown},
          {"accepted", accepted},
          {"explicit_cancels", explicit_cancels},
          {"generations", generations},
          {"accept_rate", real_to_json(accept_rate)},
          {"cancel_rate", real_to_json(cancel_rate)},
          {"generations_filtered_pct", generations_filtered_pct}};
}

bool MetricsReport::operator==(const MetricsReport& o) const {
  return symbols_completed == o.symbols_completed && shown == o.shown && accepted == o.accepted &&
         explicit_cancels == o.explicit_cancels && generations == o.generations &&
         same_real(accept_rate, o.accept_rate) && same_real(cancel_rate, o.cancel_rate) &&
         same_real(generations_filtered_pct, o.generations_filtered_pct);
}

void require_replayable(const Dataset& dataset) {
  if (dataset.manifest.gated) {
    fail(ErrorCode::kProvenance,
         "dataset was collected under an active policy; offline replay needs an ungated log");
  }
}

MetricsReport replay(std::span<const ScoredRecord> records, const ThresholdPolicy& policy) {
  MetricsReport m;
  std::int64_t total = 0;
  for (const auto& r : records) {
    ++total;
    if (!policy.trigger_passes(r.trigger)) continue;
    ++m.generations;
    if (r.outcome == Outcome::kNotShown || policy.rule_hit(r.compilable) || !policy.filter_passes(r.filter)) {
      continue;
    }
    ++m.shown;
    if (r.outcome == Outcome::kAccepted) {
      ++m.accepted;
      m.symbols_completed += r.completion_length;
    } else if (r.outcome == Outcome::kExplicitCancel) {
      ++m.explicit_cancels;
    }
  }
  m.accept_rate = ratio(m.accepted, m.shown);
  m.cancel_rate = ratio(m.explicit_cancels, m.shown);
  m.generations_filtered_pct = total > 0 ? 100.0 * static_cast<double>(total - m.generations) / static_cast<double>(total) : 0.0;
  return m;
}

MetricsReport replay(const Dataset& dataset, const ThresholdPolicy& policy, const Scorer& trigger,
                     const Scorer& filter) {
  require_replayable(dataset);
  const auto records = score_dataset(dataset, trigger, filter);
  return replay(records, policy);
}

MetricsReport raw_metrics(const Dataset& dataset) {
  MetricsReport m;
  m.generations = static_cast<std::int64_t>(dataset.generations.size());
  for (const auto& g : dataset.generations) {
    if (!is_shown(g.outcome)) continue;
    ++m.shown;
    if (g.outcome == Outcome::kAccepted) {
      ++m.accepted;
      m.symbols_completed += g.completion_length;
    } else if (g.outcome == Outcome::kExplicitCancel) {
      ++m.explicit_cancels;
    }
  }
  m.accept_rate = ratio(m.accepted, m.shown);
  m.cancel_rate = ratio(m.explicit_cancels, m.shown);
  return m;
}

TradeoffCurve build_curve(std::span<const ScoredRecord> records, std::span<const SweepPoint> sweep,
                          double target_fnr) {
  TradeoffCurve curve;
  curve.target_fnr = target_fnr;
  bool any = false;
  for (const auto& pt : sweep) {
    CurvePoint cp;
    cp.grid_pct = pt.grid_pct;
    cp.feasible = pt.feasible;
    if (pt.feasible) {
      any = true;
      cp.metrics = replay(records, pt.policy);
      cp.realized_fnr = combined_fnr(pt.policy, records);
    }
    curve.points.push_back(cp);
  }
  if (!any) fail(ErrorCode::kInfeasible, "every sweep point is infeasible");
  std::stable_sort(curve.points.begin(), curve.points.end(),
                   [](const CurvePoint& a, const CurvePoint& b) { return a.grid_pct < b.grid_pct; });
  return curve;
}

bool CurveRow::operator==(const CurveRow& o) const {
  return grid_pct == o.grid_pct && symbols_completed == o.symbols_completed &&
         same_real(accept_rate, o.accept_rate) && same_real(cancel_rate, o.cancel_rate) &&
         same_real(realized_fnr, o.realized_fnr) && feasible == o.feasible;
}

std::vector<CurveRow> curve_rows(const TradeoffCurve& curve) {
  std::vector<CurveRow> rows;
  for (const auto& p : curve.points) {
    rows.push_back({p.grid_pct, p.metrics.symbols_completed, p.metrics.accept_rate, p.metrics.cancel_rate,
                    p.realized_fnr, p.feasible});
  }
  return rows;
}

namespace {

std::string fmt_real(double v) { return std::isnan(v) ? "nan" : fmt::format("{:.17g}", v); }

double parse_real(const std::string& s) {
  if (s == "nan") return kNaN;
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    fail(ErrorCode::kParse, "bad number in curve file: " + s);
  }
  if (used != s.size()) fail(ErrorCode::kParse, "bad number in curve file: " + s);
  return v;
}

}  // namespace

std::string curve_to_tsv(const TradeoffCurve& curve) {
  std::string out(kCurveHeader);
  out += '\n';
  for (const auto& r : curve_rows(curve)) {
    out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\n", fmt_real(r.grid_pct), r.symbols_completed,
                       fmt_real(r.accept_rate), fmt_real(r.cancel_rate), fmt_real(r.realized_fnr),
                       r.feasible ? 1 : 0);
  }
  return out;
}

void export_curve(const TradeoffCurve& curve, const std::filesystem::path& path) {
  write_file(path, curve_to_tsv(curve));
}

std::vector<CurveRow> parse_curve(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty() || lines[0] != kCurveHeader) fail(ErrorCode::kParse, path.string() + ": bad curve header");
  std::vector<CurveRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string> cols;
    std::stringstream ss(lines[i]);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 6) fail(ErrorCode::kParse, fmt::format("{}:{}: expected 6 columns", path.string(), i + 1));
    CurveRow r;
    r.grid_pct = parse_real(cols[0]);
    r.symbols_completed = static_cast<std::int64_t>(parse_real(cols[1]));
    r.accept_rate = parse_real(cols[2]);
    r.cancel_rate = parse_real(cols[3]);
    r.realized_fnr = parse_real(cols[4]);
    if (cols[5] != "0" && cols[5] != "1") fail(ErrorCode::kParse, "feasible column must be 0 or 1");
    r.feasible = cols[5] == "1";
    rows.push_back(r);
  }
  return rows;
}

std::string curve_to_svg(std::span<const CurveRow> rows, const std::string& title) {
  constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 160, kTop = 40, kBottom = 50;
  const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
  double gmin = 0, gmax = 1;
  bool have = false;
  for (const auto& r : rows) {
    if (!r.feasible) continue;
    gmin = have ? std::min(gmin, r.grid_pct) : r.grid_pct;
    gmax = have ? std::max(gmax, r.grid_pct) : r.grid_pct;
    have = true;
  }
  if (gmax <= gmin) gmax = gmin + 1;

  struct Series {
    const char* name;
    const char* color;
    double (*get)(const CurveRow&);
  };
  const Series series[] = {
      {"symbols_completed", "#1f77b4", [](const CurveRow& r) { return static_cast<double>(r.symbols_completed); }},
      {"accept_rate", "#2ca02c", [](const CurveRow& r) { return r.accept_rate; }},
      {"cancel_rate", "#d62728", [](const CurveRow& r) { return r.cancel_rate; }}};

  std::string svg = fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect x=\"0\" y=\"0\" width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
      kW, kH);
  std::string safe_title;
  for (char c : title) {
    switch (c) {
      case '<': safe_title += "&lt;"; break;
      case '>': safe_title += "&gt;"; break;
      case '&': safe_title += "&amp;"; break;
      case '"': safe_title += "&quot;"; break;
      default: safe_title += c;
    }
  }
  svg += fmt::format("<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n", kLeft,
                     safe_title.empty() ? "trade-off curve (each metric scaled to its maximum)" : safe_title);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", kLeft, kTop + plot_h,
                     kLeft + plot_w);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", kLeft, kTop,
                     kTop + plot_h);
  svg += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">% generations filtered by trigger</text>\n",
                     kLeft + plot_w / 2 - 90, kH - 12);
  for (int tick = 0; tick <= 4; ++tick) {
    const double g = gmin + (gmax - gmin) * tick / 4.0;
    const double x = kLeft + plot_w * tick / 4.0;
    svg += fmt::format("<text x=\"{:.1f}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{:.3g}</text>\n",
                       x - 6, kTop + plot_h + 16, g);
  }
  int legend = 0;
  for (const auto& s : series) {
    double vmax = 0;
    for (const auto& r : rows) {
      const double v = s.get(r);
      if (r.feasible && std::isfinite(v)) vmax = std::max(vmax, std::abs(v));
    }
    std::string points;
    for (const auto& r : rows) {
      const double v = s.get(r);
      if (!r.feasible || !std::isfinite(v)) continue;
      const double x = kLeft + plot_w * (r.grid_pct - gmin) / (gmax - gmin);
      const double y = kTop + plot_h * (1.0 - (vmax > 0 ? v / vmax : 0.0));
      if (!points.empty()) points += ' ';
      points += fmt::format("{:.2f},{:.2f}", x, y);
    }
    svg += fmt::format("<polyline class=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
                       s.name, s.color, points);
    const double ly = kTop + 20.0 * legend++;
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                       kLeft + plot_w + 15, ly, kLeft + plot_w + 35, s.color);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
                       kLeft + plot_w + 40, ly + 4, s.name);
  }
  svg += "</svg>\n";
  return svg;
}

void plot_curve(std::span<const CurveRow> rows, const std::filesystem::path& path, const std::string& title) {
  write_file(path, curve_to_svg(rows, title));
}

// ---- A/B bootstrap ----

Json BootstrapResult::to_json() const {
  return {{"metric", metric},
          {"arm_a", real_to_json(arm_a)},
          {"arm_b", real_to_json(arm_b)},
          {"point_delta_pct", real_to_json(point_delta_pct)},
          {"ci_low_pct", real_to_json(ci_low_pct)},
          {"ci_high_pct", real_to_json(ci_high_pct)},
          {"significant", significant},
          {"resamples", resamples},
          {"users_a", users_a},
          {"users_b", users_b}};
}

std::vector<std::string> ab_metric_names() {
  return {"accept_rate", "cancel_rate", "symbols_completed", "shown", "generations"};
}

namespace {

struct UserTotals {
  std::int64_t generations = 0, shown = 0, accepted = 0, cancels = 0, symbols = 0;
};

std::vector<UserTotals> per_user(const Dataset& d) {
  std::map<std::string, UserTotals> by_user;
  for (const auto& e : d.events) by_user[e.user_id];
  const auto index = d.event_index();
  for (const auto& g : d.generations) {
    auto it = index.find(g.event_id);
    if (it == index.end()) fail(ErrorCode::kValidation, "generation without event: " + g.event_id);
    auto& u = by_user[d.events[it->second].user_id];
    ++u.generations;
    if (!is_shown(g.outcome)) continue;
    ++u.shown;
    if (g.outcome == Outcome::kAccepted) {
      ++u.accepted;
      u.symbols += g.completion_length;
    } else if (g.outcome == Outcome::kExplicitCancel) {
      ++u.cancels;
    }
  }
  std::vector<UserTotals> out;
  for (auto& [id, t] : by_user) out.push_back(t);
  return out;
}

// numerator / denominator contribution of one user for a metric; a
// denominator of 0 marks the user unusable for rates.
struct Part {
  double num, den;
};

Part part_of(const std::string& metric, const UserTotals& u) {
  if (metric == "accept_rate") return {static_cast<double>(u.accepted), static_cast<double>(u.shown)};
  if (metric == "cancel_rate") return {static_cast<double>(u.cancels), static_cast<double>(u.shown)};
  if (metric == "symbols_completed") return {static_cast<double>(u.symbols), 1.0};
  if (metric == "shown") return {static_cast<double>(u.shown), 1.0};
  if (metric == "generations") return {static_cast<double>(u.generations), 1.0};
  fail(ErrorCode::kConfig, "unknown metric: " + metric);
}

double arm_value(std::span<const Part> parts, std::span<const std::uint32_t> sample, bool pooled) {
  if (pooled) {
    double num = 0, den = 0;
    for (auto i : sample) {
      num += parts[i].num;
      den += parts[i].den;
    }
    return den > 0 ? num / den : kNaN;
  }
  double sum = 0;
  for (auto i : sample) sum += parts[i].num / parts[i].den;
  return sample.empty() ? kNaN : sum / static_cast<double>(sample.size());
}

double percentile(std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::vector<BootstrapResult> ab_compare(const Dataset& arm_a, const Dataset& arm_b,
                                        std::span<const std::string> metrics, const AbOptions& options) {
  if (options.resamples < 1) fail(ErrorCode::kConfig, "resamples must be positive");
  const auto users_a = per_user(arm_a), users_b = per_user(arm_b);
  if (users_a.size() < 2 || users_b.size() < 2) fail(ErrorCode::kValidation, "each arm needs at least 2 users");

  std::vector<BootstrapResult> results;
  for (std::size_t mi = 0; mi < metrics.size(); ++mi) {
    const auto& metric = metrics[mi];
    std::vector<Part> pa, pb;
    for (const auto& u : users_a) {
      const auto p = part_of(metric, u);
      if (p.den > 0) pa.push_back(p);
    }
    for (const auto& u : users_b) {
      const auto p = part_of(metric, u);
      if (p.den > 0) pb.push_back(p);
    }
    if (pa.empty() || pb.empty()) {
      logger().warn("metric {} skipped: zero denominator in an arm", metric);
      continue;
    }
    std::vector<std::uint32_t> ia(pa.size()), ib(pb.size());
    for (std::size_t i = 0; i < ia.size(); ++i) ia[i] = static_cast<std::uint32_t>(i);
    for (std::size_t i = 0; i < ib.size(); ++i) ib[i] = static_cast<std::uint32_t>(i);
    BootstrapResult r;
    r.metric = metric;
    r.users_a = static_cast<std::int64_t>(pa.size());
    r.users_b = static_cast<std::int64_t>(pb.size());
    r.arm_a = arm_value(pa, ia, options.pooled);
    r.arm_b = arm_value(pb, ib, options.pooled);
    if (!(r.arm_a != 0.0)) {
      logger().warn("metric {} skipped: arm A value is zero", metric);
      continue;
    }
    r.point_delta_pct = 100.0 * (r.arm_b - r.arm_a) / r.arm_a;

    std::vector<double> deltas;
    deltas.reserve(static_cast<std::size_t>(options.resamples));
    std::vector<std::uint32_t> sa(pa.size()), sb(pb.size());
    for (int b = 0; b < options.resamples; ++b) {
      // Per-resample stream, so results do not depend on evaluation order.
      auto rng = Rng::derive(mix_seed(options.seed, mi), static_cast<std::uint64_t>(b));
      for (auto& s : sa) s = static_cast<std::uint32_t>(rng.below(pa.size()));
      for (auto& s : sb) s = static_cast<std::uint32_t>(rng.below(pb.size()));
      const double va = arm_value(pa, sa, options.pooled), vb = arm_value(pb, sb, options.pooled);
      if (std::isfinite(va) && va != 0.0 && std::isfinite(vb)) deltas.push_back(100.0 * (vb - va) / va);
    }
    r.resamples = static_cast<int>(deltas.size());
    if (!deltas.empty()) {
      std::sort(deltas.begin(), deltas.end());
      r.ci_low_pct = percentile(deltas, 0.025);
      r.ci_high_pct = percentile(deltas, 0.975);
      r.significant = !(r.ci_low_pct <= 0.0 && 0.0 <= r.ci_high_pct);
    }
    results.push_back(r);
  }
  return results;
}

Json ab_report_json(std::span<const BootstrapResult> results, const AbOptions& options) {
  Json list = Json::array();
  for (const auto& r : results) list.push_back(r.to_json());
  return {{"resamples", options.resamples},
          {"seed", options.seed},
          {"aggregation", options.pooled ? "pooled" : "per_user_mean"},
          {"confidence", 0.95},
          {"results", std::move(list)}};
}

}  // namespace cgate
