#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cgate/events.hpp"
#include "cgate/policy.hpp"

namespace cgate {

class Scorer;

// One generation with both gate scores attached.
struct ScoredRecord {
  std::string user_id;
  double trigger = 0.0;
  double filter = 0.0;
  Outcome outcome = Outcome::kNotShown;
  bool compilable = true;
  std::uint32_t completion_length = 0;

  bool positive() const { return outcome == Outcome::kAccepted; }
};

std::vector<ScoredRecord> score_dataset(const Dataset& dataset, const Scorer& trigger, const Scorer& filter);
// Attaches precomputed per-generation scores.
std::vector<ScoredRecord> attach_scores(const Dataset& dataset, std::span<const double> trigger,
                                        std::span<const double> filter);

struct FnrBudget {
  double target_fnr = 0.0;
  std::int64_t total_positives = 0;
  std::int64_t allowed_fn = 0;

  static FnrBudget make(double target_fnr, std::int64_t total_positives);
};

// Largest t with |{s < t}| <= budget: the budget-th smallest score
// (0-based), or +inf when the budget covers every score. Empty input gives +inf.
double threshold_at_count(std::span<const double> scores, std::int64_t budget);
// Throws on empty positives.
double threshold_at_fnr(std::span<const double> positive_scores, double target_fnr);

struct FnBreakdown {
  std::int64_t positives = 0;
  std::int64_t trigger_fn = 0;
  std::int64_t rule_fn = 0;
  std::int64_t filter_fn = 0;
  std::int64_t total() const { return trigger_fn + rule_fn + filter_fn; }
};
FnBreakdown fn_breakdown(const ThresholdPolicy& policy, std::span<const ScoredRecord> records);
double combined_fnr(const ThresholdPolicy& policy, std::span<const ScoredRecord> records);

struct SweepPoint {
  double grid_pct = 0.0;
  bool feasible = false;
  ThresholdPolicy policy;  // trigger threshold always set; filter only when feasible
  double realized_fnr = 0.0;
  std::int64_t trigger_blocked = 0;  // generations blocked by the trigger
  std::int64_t trigger_fn = 0;
  std::int64_t surviving_positives = 0;
  std::int64_t remaining_budget = 0;  // negative when infeasible
};

std::vector<double> default_grid();  // 0, 5, ..., 60

std::vector<SweepPoint> sweep_joint(std::span<const ScoredRecord> records, double target_fnr,
                                    std::span<const double> grid_pct, HardRules rules = {});

}  // namespace cgate
