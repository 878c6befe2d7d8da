#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cgate/calibrate.hpp"
#include "cgate/events.hpp"
#include "cgate/policy.hpp"

namespace cgate {

class Scorer;

struct MetricsReport {
  std::int64_t symbols_completed = 0;
  std::int64_t shown = 0;
  std::int64_t accepted = 0;
  std::int64_t explicit_cancels = 0;
  // Generations requested under the policy (not blocked by the trigger).
  std::int64_t generations = 0;
  double accept_rate = kNaN;  // NaN when nothing is shown
  double cancel_rate = kNaN;
  // Share of logged generations the trigger prevented, in percent.
  double generations_filtered_pct = 0.0;

  Json to_json() const;
  bool operator==(const MetricsReport& other) const;
};

// Refuses logs collected with gates active (ErrorCode::kProvenance).
void require_replayable(const Dataset& dataset);

MetricsReport replay(std::span<const ScoredRecord> records, const ThresholdPolicy& policy);
MetricsReport replay(const Dataset& dataset, const ThresholdPolicy& policy, const Scorer& trigger,
                     const Scorer& filter);
// Metrics of the log as recorded, no gating.
MetricsReport raw_metrics(const Dataset& dataset);

struct CurvePoint {
  double grid_pct = 0.0;
  MetricsReport metrics;
  double realized_fnr = kNaN;  // NaN for infeasible points
  bool feasible = false;
};

struct TradeoffCurve {
  double target_fnr = 0.0;
  std::vector<CurvePoint> points;  // sorted by grid_pct
};

// Replays every feasible sweep point over records; infeasible points are
// carried through flagged. Throws when no point is feasible.
TradeoffCurve build_curve(std::span<const ScoredRecord> records, std::span<const SweepPoint> sweep,
                          double target_fnr);

// The columns that survive a TSV round trip.
struct CurveRow {
  double grid_pct = 0.0;
  std::int64_t symbols_completed = 0;
  double accept_rate = kNaN;
  double cancel_rate = kNaN;
  double realized_fnr = kNaN;
  bool feasible = false;
  bool operator==(const CurveRow& other) const;
};

inline constexpr std::string_view kCurveHeader =
    "grid_pct\tsymbols_completed\taccept_rate\tcancel_rate\trealized_fnr\tfeasible";

std::vector<CurveRow> curve_rows(const TradeoffCurve& curve);
std::string curve_to_tsv(const TradeoffCurve& curve);
void export_curve(const TradeoffCurve& curve, const std::filesystem::path& path);
std::vector<CurveRow> parse_curve(const std::filesystem::path& path);
std::string curve_to_svg(std::span<const CurveRow> rows, const std::string& title);
void plot_curve(std::span<const CurveRow> rows, const std::filesystem::path& path, const std::string& title = {});

// User-level A/B analysis.
struct BootstrapResult {
  std::string metric;
  double arm_a = kNaN;
  double arm_b = kNaN;
  double point_delta_pct = kNaN;
  double ci_low_pct = kNaN;
  double ci_high_pct = kNaN;
  bool significant = false;
  int resamples = 0;
  std::int64_t users_a = 0;
  std::int64_t users_b = 0;

  Json to_json() const;
};

struct AbOptions {
  int resamples = 2000;
  std::uint64_t seed = 0;
  // Pool events across users instead of averaging per-user metrics.
  bool pooled = false;
};

// accept_rate, cancel_rate, symbols_completed, shown, generations.
std::vector<std::string> ab_metric_names();

// Rate metrics skip users with nothing shown; a metric whose arm has no
// usable users is skipped with a warning.
std::vector<BootstrapResult> ab_compare(const Dataset& arm_a, const Dataset& arm_b,
                                        std::span<const std::string> metrics, const AbOptions& options);

Json ab_report_json(std::span<const BootstrapResult> results, const AbOptions& options);

}  // namespace cgate
