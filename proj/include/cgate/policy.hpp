#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "cgate/util.hpp"

namespace cgate {

struct HardRules {
  bool block_non_compilable = false;
  bool operator==(const HardRules&) const = default;
};

// Scores strictly below a threshold are blocked; ties pass. A threshold of
// +inf blocks everything, 0 blocks nothing.
struct ThresholdPolicy {
  double trigger_threshold = 0.0;
  double filter_threshold = 0.0;
  HardRules hard_rules;

  static ThresholdPolicy pass_all() { return {}; }

  bool trigger_passes(double score) const { return !(score < trigger_threshold); }
  bool filter_passes(double score) const { return !(score < filter_threshold); }
  // Rule name when a hard rule blocks the generation.
  std::optional<std::string> rule_hit(bool compilable) const {
    if (hard_rules.block_non_compilable && !compilable) return std::string("non_compilable");
    return std::nullopt;
  }

  bool operator==(const ThresholdPolicy&) const = default;
};

struct PolicyProvenance {
  std::string trigger_model_sha256;
  std::string filter_model_sha256;
  double target_fnr = 0.0;
  double grid_pct = 0.0;
  double realized_fnr = 0.0;
  bool operator==(const PolicyProvenance&) const = default;
};

struct PolicyFile {
  ThresholdPolicy policy;
  std::optional<PolicyProvenance> provenance;

  Json to_json() const;
  static PolicyFile from_json(const Json& doc);
  void save(const std::filesystem::path& path) const;
  static PolicyFile load(const std::filesystem::path& path);
};

}  // namespace cgate
