#include "cgate/calibrate.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "cgate/error.hpp"
#include "cgate/scoring.hpp"

namespace cgate {

Json PolicyFile::to_json() const {
  Json doc = {{"trigger_threshold", real_to_json(policy.trigger_threshold)},
              {"filter_threshold", real_to_json(policy.filter_threshold)},
              {"hard_rules", {{"block_non_compilable", policy.hard_rules.block_non_compilable}}}};
  if (provenance) {
    doc["provenance"] = {{"trigger_model_sha256", provenance->trigger_model_sha256},
                         {"filter_model_sha256", provenance->filter_model_sha256},
                         {"target_fnr", provenance->target_fnr},
                         {"grid_pct", provenance->grid_pct},
                         {"realized_fnr", provenance->realized_fnr}};
  }
  return doc;
}

PolicyFile PolicyFile::from_json(const Json& doc) {
  try {
    PolicyFile f;
    f.policy.trigger_threshold = real_from_json(doc.at("trigger_threshold"));
    f.policy.filter_threshold = real_from_json(doc.at("filter_threshold"));
    for (double t : {f.policy.trigger_threshold, f.policy.filter_threshold}) {
      if (std::isnan(t) || t < 0.0 || (t > 1.0 && !std::isinf(t))) {
        fail(ErrorCode::kValidation, "policy thresholds must lie in [0, 1] or be +inf");
      }
    }
    if (auto it = doc.find("hard_rules"); it != doc.end()) {
      f.policy.hard_rules.block_non_compilable = it->value("block_non_compilable", false);
    }
    if (auto it = doc.find("provenance"); it != doc.end() && !it->is_null()) {
      PolicyProvenance p;
      p.trigger_model_sha256 = it->value("trigger_model_sha256", "");
      p.filter_model_sha256 = it->value("filter_model_sha256", "");
      p.target_fnr = it->value("target_fnr", 0.0);
      p.grid_pct = it->value("grid_pct", 0.0);
      p.realized_fnr = it->value("realized_fnr", 0.0);
      f.provenance = p;
    }
    return f;
  } catch (const Json::exception& e) {
    fail(ErrorCode::kParse, std::string("malformed policy: ") + e.what());
  }
}

void PolicyFile::save(const std::filesystem::path& path) const { write_file(path, to_json().dump(2) + "\n"); }

PolicyFile PolicyFile::load(const std::filesystem::path& path) {
  const auto text = read_file(path);
  try {
    return from_json(Json::parse(text));
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

std::vector<ScoredRecord> attach_scores(const Dataset& dataset, std::span<const double> trigger,
                                        std::span<const double> filter) {
  if (trigger.size() != dataset.generations.size() || filter.size() != dataset.generations.size()) {
    fail(ErrorCode::kDimension, "score vectors must have one entry per generation");
  }
  const auto index = dataset.event_index();
  std::vector<ScoredRecord> out;
  out.reserve(dataset.generations.size());
  for (std::size_t g = 0; g < dataset.generations.size(); ++g) {
    const auto& gen = dataset.generations[g];
    auto it = index.find(gen.event_id);
    if (it == index.end()) fail(ErrorCode::kValidation, "generation without event: " + gen.event_id);
    out.push_back({dataset.events[it->second].user_id, trigger[g], filter[g], gen.outcome, gen.compilable,
                   gen.completion_length});
  }
  return out;
}

std::vector<ScoredRecord> score_dataset(const Dataset& dataset, const Scorer& trigger, const Scorer& filter) {
  if (trigger.view() != View::kTrigger) fail(ErrorCode::kConfig, "trigger model must use the trigger view");
  const auto t = score_generations(dataset, trigger);
  const auto f = score_generations(dataset, filter);
  return attach_scores(dataset, t, f);
}

FnrBudget FnrBudget::make(double target_fnr, std::int64_t total_positives) {
  if (!(target_fnr >= 0.0 && target_fnr <= 1.0)) fail(ErrorCode::kConfig, "target_fnr must lie in [0, 1]");
  FnrBudget b;
  b.target_fnr = target_fnr;
  b.total_positives = total_positives;
  // The epsilon keeps 0.1 * 30 from flooring to 2.
  b.allowed_fn = static_cast<std::int64_t>(std::floor(target_fnr * static_cast<double>(total_positives) + 1e-9));
  b.allowed_fn = std::min(b.allowed_fn, total_positives);
  return b;
}

double threshold_at_count(std::span<const double> scores, std::int64_t budget) {
  if (budget < 0) fail(ErrorCode::kInfeasible, "negative false-negative budget");
  if (static_cast<std::size_t>(budget) >= scores.size()) return kInf;
  std::vector<double> sorted(scores.begin(), scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + budget, sorted.end());
  return sorted[static_cast<std::size_t>(budget)];
}

double threshold_at_fnr(std::span<const double> positive_scores, double target_fnr) {
  if (positive_scores.empty()) fail(ErrorCode::kDegenerateLabels, "no positive scores to calibrate on");
  const auto budget = FnrBudget::make(target_fnr, static_cast<std::int64_t>(positive_scores.size()));
  return threshold_at_count(positive_scores, budget.allowed_fn);
}

FnBreakdown fn_breakdown(const ThresholdPolicy& policy, std::span<const ScoredRecord> records) {
  FnBreakdown b;
  for (const auto& r : records) {
    if (!r.positive()) continue;
    ++b.positives;
    // Disjoint by construction: trigger first, then rules, then the filter.
    if (!policy.trigger_passes(r.trigger)) ++b.trigger_fn;
    else if (policy.rule_hit(r.compilable)) ++b.rule_fn;
    else if (!policy.filter_passes(r.filter)) ++b.filter_fn;
  }
  return b;
}

double combined_fnr(const ThresholdPolicy& policy, std::span<const ScoredRecord> records) {
  const auto b = fn_breakdown(policy, records);
  if (b.positives == 0) fail(ErrorCode::kDegenerateLabels, "no positives: FNR undefined");
  return static_cast<double>(b.total()) / static_cast<double>(b.positives);
}

std::vector<double> default_grid() {
  std::vector<double> g;
  for (int p = 0; p <= 60; p += 5) g.push_back(p);
  return g;
}

std::vector<SweepPoint> sweep_joint(std::span<const ScoredRecord> records, double target_fnr,
                                    std::span<const double> grid_pct, HardRules rules) {
  if (grid_pct.empty()) fail(ErrorCode::kConfig, "empty sweep grid");
  for (double g : grid_pct) {
    if (!(g >= 0.0 && g < 100.0)) fail(ErrorCode::kConfig, fmt::format("grid point {} outside [0, 100)", g));
  }
  if (records.empty()) fail(ErrorCode::kDegenerateLabels, "no generations to calibrate on");
  std::vector<double> trigger_sorted;
  trigger_sorted.reserve(records.size());
  std::int64_t positives = 0;
  for (const auto& r : records) {
    trigger_sorted.push_back(r.trigger);
    positives += r.positive();
  }
  if (positives == 0) fail(ErrorCode::kDegenerateLabels, "no positives: FNR undefined");
  std::sort(trigger_sorted.begin(), trigger_sorted.end());
  const auto budget = FnrBudget::make(target_fnr, positives);
  const auto n = records.size();

  std::vector<double> sorted_grid(grid_pct.begin(), grid_pct.end());
  std::sort(sorted_grid.begin(), sorted_grid.end());
  std::vector<SweepPoint> out;
  std::vector<double> surviving_scores;
  for (double g : sorted_grid) {
    SweepPoint pt;
    pt.grid_pct = g;
    pt.policy.hard_rules = rules;
    const auto k = static_cast<std::size_t>(std::floor(g * static_cast<double>(n) / 100.0 + 1e-9));
    pt.policy.trigger_threshold = trigger_sorted[std::min(k, n - 1)];
    surviving_scores.clear();
    std::int64_t rule_fn = 0;
    for (const auto& r : records) {
      const bool passes = pt.policy.trigger_passes(r.trigger);
      pt.trigger_blocked += !passes;
      if (!r.positive()) continue;
      if (!passes) {
        ++pt.trigger_fn;
        continue;
      }
      ++pt.surviving_positives;
      if (pt.policy.rule_hit(r.compilable)) ++rule_fn;
      else surviving_scores.push_back(r.filter);
    }
    pt.remaining_budget = budget.allowed_fn - pt.trigger_fn - rule_fn;
    pt.feasible = pt.remaining_budget >= 0;
    if (pt.feasible) {
      pt.policy.filter_threshold = threshold_at_count(surviving_scores, pt.remaining_budget);
    } else {
      pt.policy.filter_threshold = 0.0;
    }
    pt.realized_fnr = combined_fnr(pt.policy, records);
    out.push_back(pt);
  }
  return out;
}

}  // namespace cgate
