#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cgate/schema.hpp"

namespace cgate {

enum class Outcome { kNotShown, kAccepted, kExplicitCancel, kIgnored };
enum class Label { kNegative, kPositive };

std::string_view to_string(Outcome outcome);
Outcome outcome_from_string(std::string_view text);

constexpr bool is_shown(Outcome outcome) { return outcome != Outcome::kNotShown; }

// Positive iff the completion was shown and accepted.
constexpr Label label_of(Outcome outcome) {
  return outcome == Outcome::kAccepted ? Label::kPositive : Label::kNegative;
}

struct CompletionEvent {
  std::string event_id;
  std::string user_id;
  std::string session_id;
  std::int64_t timestamp_ms = 0;
  std::string language;
  FeatureBag trigger_features;
  // Code before the caret; only the hybrid model consumes it.
  std::optional<std::string> context;

  Json to_json() const;
  static CompletionEvent from_json(const Json& doc);
  bool operator==(const CompletionEvent&) const = default;
};

struct GenerationRecord {
  std::string event_id;
  std::uint32_t completion_length = 0;
  // Full filter-time bag: trigger names plus filter-only names.
  FeatureBag filter_features;
  bool compilable = true;
  Outcome outcome = Outcome::kNotShown;

  Json to_json() const;
  static GenerationRecord from_json(const Json& doc);
  bool operator==(const GenerationRecord&) const = default;
};

inline Label label_of(const GenerationRecord& record) { return label_of(record.outcome); }

enum class SplitTag { kFull, kTrain, kTest };
std::string_view to_string(SplitTag tag);
SplitTag split_from_string(std::string_view text);

struct DatasetManifest {
  static constexpr std::string_view kFormat = "cgate-dataset/1";

  std::string version{kFormat};
  std::int64_t event_count = 0;
  std::int64_t generation_count = 0;
  std::int64_t user_count = 0;
  // Negatives per positive; +inf when there are no positives.
  double label_imbalance_trigger = 0.0;
  double label_imbalance_filter = 0.0;
  std::string schema_hash;
  SplitTag split = SplitTag::kFull;
  // True when the log was collected with gates active (closed-loop or A/B
  // arms); such logs cannot be replayed counterfactually.
  bool gated = false;

  Json to_json() const;
  static DatasetManifest from_json(const Json& doc);
  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  FeatureSchema schema;
  std::vector<CompletionEvent> events;
  std::vector<GenerationRecord> generations;
  DatasetManifest manifest;

  // event_id -> index into events.
  std::unordered_map<std::string, std::size_t> event_index() const;
  // Generation records paired with their events (dangling ones skipped).
  std::vector<std::pair<const CompletionEvent*, const GenerationRecord*>> joined() const;
};

struct Violation {
  std::string kind;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::size_t count(std::string_view kind) const;
};

ValidationReport validate_dataset(std::span<const CompletionEvent> events,
                                  std::span<const GenerationRecord> generations,
                                  const DatasetManifest& manifest, const FeatureSchema& schema);
// Reads the dataset files under dir and validates them. Unreadable files
// raise ErrorCode::kIo; malformed lines raise ErrorCode::kParse.
ValidationReport validate_dataset(const std::filesystem::path& dir);

DatasetManifest dataset_stats(std::span<const CompletionEvent> events,
                              std::span<const GenerationRecord> generations,
                              const FeatureSchema& schema);

// Disjoint user-level split. Returns (train, test).
std::pair<Dataset, Dataset> split_by_user(const Dataset& dataset, double test_fraction,
                                          std::uint64_t seed);

// Subset of the dataset restricted to the given users, manifest recomputed.
Dataset select_users(const Dataset& dataset, std::span<const std::string> users,
                     SplitTag tag);

std::vector<std::string> distinct_users(std::span<const CompletionEvent> events);

namespace io {

inline constexpr std::string_view kEventsFile = "events.jsonl";
inline constexpr std::string_view kGenerationsFile = "generations.jsonl";
inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kSchemaFile = "schema.json";
inline constexpr std::string_view kGroundTruthFile = "ground_truth.jsonl";

std::string events_to_jsonl(std::span<const CompletionEvent> events);
std::string generations_to_jsonl(std::span<const GenerationRecord> generations);
std::vector<CompletionEvent> events_from_jsonl(const std::filesystem::path& path);
std::vector<GenerationRecord> generations_from_jsonl(const std::filesystem::path& path);

FeatureSchema read_schema(const std::filesystem::path& path);
void write_schema(const std::filesystem::path& path, const FeatureSchema& schema);

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);
// read_dataset, then ErrorCode::kValidation unless the contents validate.
Dataset read_valid_dataset(const std::filesystem::path& dir);

}  // namespace io

}  // namespace cgate
