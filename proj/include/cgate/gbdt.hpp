#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cgate/features.hpp"

namespace cgate::gbdt {

struct TrainConfig {
  int trees = 200;
  int max_depth = 6;
  double learning_rate = 0.1;
  int bins = 256;
  double min_child_weight = 1.0;
  double l2_leaf = 1.0;
  double positive_class_weight = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  Json to_json() const;
  static TrainConfig from_json(const Json& doc);
};

// Array-encoded node. feature < 0 marks a leaf.
struct Node {
  int feature = -1;
  double threshold = 0.0;  // left iff x <= threshold
  bool missing_left = true;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output (already scaled by the learning rate)
  double gain = 0.0;   // split gain, 0 for leaves
};

struct Tree {
  std::vector<Node> nodes;  // nodes[0] is the root
  double predict(std::span<const double> x) const;
};

struct Ensemble {
  static constexpr std::string_view kFormat = "cgate-gbdt/1";

  double base_score = 0.0;  // log-odds
  std::vector<Tree> trees;
  std::vector<std::string> feature_names;
  std::optional<EncoderState> encoder;
  std::string schema_hash;
  View view = View::kFilter;
  std::string task;
  TrainConfig config;

  std::size_t feature_count() const { return feature_names.size(); }
  // base_score + sum of leaf values, trees summed in order.
  double raw_score(std::span<const double> x) const;

  Json to_json() const;
  // expected_schema_hash, when non-empty, must match the artifact.
  static Ensemble from_json(const Json& doc, const std::string& expected_schema_hash = {});
};

struct TrainReport {
  // Weighted mean logistic loss after the base score (index 0) and after
  // each boosting round.
  std::vector<double> loss;
};

// matrix is row-major with feature_names.size() columns; NaN marks missing.
// Weights may be empty (all ones).
Ensemble train(std::span<const double> matrix, std::span<const int> labels,
               std::span<const double> weights, std::vector<std::string> feature_names,
               const TrainConfig& config, TrainReport* report = nullptr);

// Sigmoid of raw_score, clamped into the open interval (0, 1).
double predict_proba(const Ensemble& model, std::span<const double> x);

// Total split gain per feature.
std::map<std::string, double> feature_importance(const Ensemble& model);

void save(const Ensemble& model, const std::filesystem::path& path);
Ensemble load(const std::filesystem::path& path, const std::string& expected_schema_hash = {});

}  // namespace cgate::gbdt
