#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cgate/events.hpp"
#include "cgate/policy.hpp"

namespace cgate::synth {

struct BehaviorProfile {
  double base_accept_rate = 0.31;
  double cancel_propensity = 0.25;
  double typing_speed_mean = 4.5;  // chars/sec
  double typing_speed_std = 1.5;
  double session_length_mean = 30.0;  // events
  // Log-odds contribution per unit of each feature's standardized effect term.
  std::map<std::string, double> feature_effect_weights;
  double context_signal_strength = 0.0;
  // Standard deviation of the per-user random intercept on the accept logit.
  double user_effect_std = 0.3;

  static std::map<std::string, double> default_effect_weights();
};

struct LanguageWeight {
  std::string name;
  double weight = 1.0;
};

struct DependenceModel {
  bool enabled = false;
  // Expected extra trigger opportunities created per blocked completion.
  double opportunity_boost = 0.45;
};

struct WorldConfig {
  std::int64_t user_count = 300;
  double sessions_per_user = 6.0;
  // Target fraction of generations that still match the context when ready.
  double show_rate = 0.31;
  std::vector<std::pair<BehaviorProfile, double>> profiles;
  std::vector<LanguageWeight> languages;
  DependenceModel dependence;
  std::uint64_t seed = 1;

  // Throws ErrorCode::kConfig on invariant violations.
  void validate() const;

  Json to_json() const;
  static WorldConfig from_json(const Json& doc);
};

WorldConfig default_world();

struct GroundTruth {
  std::string event_id;
  // Probability the generation ends up accepted (the positive label).
  double accept_probability = 0.0;
  double shown_probability = 0.0;
  double accept_given_shown = 0.0;

  Json to_json() const;
  static GroundTruth from_json(const Json& doc);
};

struct GeneratedWorld {
  Dataset dataset;
  std::vector<GroundTruth> ground_truth;  // one per event, same order
};

GeneratedWorld generate(const WorldConfig& config);

using TriggerScorer = std::function<double(const CompletionEvent&)>;

struct ClosedLoopStats {
  std::int64_t original_events = 0;
  std::int64_t injected_events = 0;
  std::int64_t blocked = 0;
  std::int64_t generations = 0;
  std::int64_t accepted_symbols = 0;
  std::int64_t typed_symbols = 0;  // total symbols written, completions included
  double rocc = 0.0;
  std::map<std::string, std::int64_t> generations_per_user;

  Json to_json() const;
};

struct ClosedLoopWorld {
  GeneratedWorld world;
  ClosedLoopStats stats;
};

// Gates every opportunity through the policy's trigger threshold. A blocked
// opportunity spawns a Poisson(opportunity_boost) chain of retries at the same
// completion point; the chain stops at the first retry that passes.
ClosedLoopWorld generate_closed_loop(const WorldConfig& config, const ThresholdPolicy& policy,
                                     const TriggerScorer& scorer);

// Open-loop run summarized with the same statistics (no gating).
ClosedLoopStats open_loop_stats(const WorldConfig& config);

void write_world(const std::filesystem::path& dir, const GeneratedWorld& world);
std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& path);

}  // namespace cgate::synth
